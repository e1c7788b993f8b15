//! Wind-farm sites, hourly wind/price histories and the battery catalog.
//!
//! File formats:
//!
//! * `sites.csv`: `site_id,name,lon,lat,capacity_mw,interconnect_mw`
//! * `history.csv`: `site_id,timestamp_utc,wind_ms,da_usd_mwh,rt_usd_mwh,res_usd_mw`.
//!   When the reserve column is missing, a leading `# res_usd_mw=<value>`
//!   line supplies a constant reserve price.
//! * `batteries.json`: either `{"batteries": [..explicit entries..]}` or the
//!   factored form `{"chemistries", "durations_h", "ratings_mw",
//!   "cost_usd_per_kw", "rte"}`.

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::canonical::{derive_seed_str, fmt_f64};

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{file}: line {line}, column `{column}`: {message}")]
    Parse { file: String, line: usize, column: String, message: String },
    #[error("{file}: line {line}: {message}")]
    Range { file: String, line: usize, message: String },
    #[error("{file}: missing hour {missing} for site {site_id}")]
    Gap { file: String, site_id: String, missing: String },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFarmSite {
    pub site_id: String,
    pub name: String,
    pub lon: f64,
    pub lat: f64,
    pub capacity_mw: f64,
    pub interconnect_mw: f64,
}

impl WindFarmSite {
    pub fn check(&self) -> Result<(), String> {
        if self.site_id.is_empty() {
            return Err("empty site_id".into());
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !(self.capacity_mw > 0.0 && self.capacity_mw.is_finite()) {
            return Err(format!("capacity {} must be positive", self.capacity_mw));
        }
        if !(self.interconnect_mw > 0.0 && self.interconnect_mw.is_finite()) {
            return Err(format!("interconnection limit {} must be positive", self.interconnect_mw));
        }
        Ok(())
    }
}

/// Contiguous hourly series for one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRecord {
    pub site_id: String,
    /// RFC 3339 timestamp of the first hour.
    pub start_utc: String,
    pub wind_ms: Vec<f64>,
    pub da_usd_mwh: Vec<f64>,
    pub rt_usd_mwh: Vec<f64>,
    pub res_usd_mw: Vec<f64>,
}

impl HistoricalRecord {
    pub fn hours(&self) -> usize {
        self.wind_ms.len()
    }

    pub fn days(&self) -> usize {
        self.hours() / HOURS_PER_DAY
    }

    pub fn start(&self) -> Result<DateTime<Utc>, String> {
        DateTime::parse_from_rfc3339(&self.start_utc)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| format!("bad start timestamp {}: {e}", self.start_utc))
    }

    pub fn check(&self) -> Result<(), String> {
        let n = self.wind_ms.len();
        if self.da_usd_mwh.len() != n || self.rt_usd_mwh.len() != n || self.res_usd_mw.len() != n {
            return Err("series lengths differ".into());
        }
        if n == 0 || n % HOURS_PER_DAY != 0 {
            return Err(format!("length {n} is not a positive multiple of 24"));
        }
        if let Some(v) = self.wind_ms.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(format!("invalid wind speed {v}"));
        }
        let all = self.da_usd_mwh.iter().chain(&self.rt_usd_mwh).chain(&self.res_usd_mw);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err("non-finite price".into());
        }
        self.start()?;
        Ok(())
    }

    /// Slice into whole days, converting wind speed with `curve`.
    pub fn day_profiles(&self, curve: &PowerCurve) -> Vec<DayProfile> {
        let start = self.start().unwrap_or_else(|_| Utc.timestamp_opt(0, 0).unwrap());
        (0..self.days())
            .map(|d| {
                let r = d * HOURS_PER_DAY..(d + 1) * HOURS_PER_DAY;
                let wind_ms = self.wind_ms[r.clone()].to_vec();
                DayProfile {
                    date: (start + Duration::days(d as i64)).format("%Y-%m-%d").to_string(),
                    day_index: d,
                    wind: wind_ms.iter().map(|v| wind_to_power(*v, curve)).collect(),
                    wind_ms,
                    da: self.da_usd_mwh[r.clone()].to_vec(),
                    rt: self.rt_usd_mwh[r.clone()].to_vec(),
                    reserve: self.res_usd_mw[r].to_vec(),
                }
            })
            .collect()
    }

    /// Inverse of [`HistoricalRecord::day_profiles`].
    pub fn from_days(site_id: &str, start_utc: &str, days: &[DayProfile]) -> HistoricalRecord {
        let cat = |f: fn(&DayProfile) -> &Vec<f64>| days.iter().flat_map(|d| f(d).iter().copied()).collect();
        HistoricalRecord {
            site_id: site_id.to_string(),
            start_utc: start_utc.to_string(),
            wind_ms: cat(|d| &d.wind_ms),
            da_usd_mwh: cat(|d| &d.da),
            rt_usd_mwh: cat(|d| &d.rt),
            res_usd_mw: cat(|d| &d.reserve),
        }
    }
}

/// A site together with its history; the payload of the `HistoricalRecord`
/// port type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteHistory {
    pub site: WindFarmSite,
    pub record: HistoricalRecord,
}

/// One representative day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    pub date: String,
    pub day_index: usize,
    /// Wind power factor in [0, 1].
    pub wind: Vec<f64>,
    pub wind_ms: Vec<f64>,
    pub da: Vec<f64>,
    pub rt: Vec<f64>,
    pub reserve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub config_id: String,
    pub chemistry: String,
    pub duration_h: f64,
    pub rating_mw: f64,
    pub cost_usd_per_kw: f64,
    pub rte: f64,
}

impl BatteryConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.duration_h > 0.0 && self.duration_h.is_finite()) {
            return Err(format!("duration {} must be positive", self.duration_h));
        }
        if !(self.rating_mw >= 0.0 && self.rating_mw.is_finite()) {
            return Err(format!("rating {} must be non-negative", self.rating_mw));
        }
        if !(self.cost_usd_per_kw >= 0.0 && self.cost_usd_per_kw.is_finite()) {
            return Err(format!("cost {} must be non-negative", self.cost_usd_per_kw));
        }
        if !(self.rte > 0.0 && self.rte <= 1.0) {
            return Err(format!("round-trip efficiency {} outside (0, 1]", self.rte));
        }
        Ok(())
    }

    /// One-way efficiency; the round trip is split evenly between charge and
    /// discharge.
    pub fn eta(&self) -> f64 {
        self.rte.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub cut_in_ms: f64,
    pub rated_ms: f64,
    pub cut_out_ms: f64,
}

impl Default for PowerCurve {
    fn default() -> Self {
        PowerCurve { cut_in_ms: 3.0, rated_ms: 12.0, cut_out_ms: 25.0 }
    }
}

impl PowerCurve {
    pub fn new(cut_in_ms: f64, rated_ms: f64, cut_out_ms: f64) -> Result<Self, String> {
        if !(0.0 < cut_in_ms && cut_in_ms < rated_ms && rated_ms < cut_out_ms) {
            return Err(format!("need 0 < cut-in < rated < cut-out, got {cut_in_ms}/{rated_ms}/{cut_out_ms}"));
        }
        Ok(PowerCurve { cut_in_ms, rated_ms, cut_out_ms })
    }
}

/// Normalized turbine output for a hub-height wind speed.
pub fn wind_to_power(speed: f64, curve: &PowerCurve) -> f64 {
    let PowerCurve { cut_in_ms: vi, rated_ms: vr, cut_out_ms: vo } = *curve;
    if !(speed >= vi) || speed >= vo {
        0.0
    } else if speed >= vr {
        1.0
    } else {
        (speed.powi(3) - vi.powi(3)) / (vr.powi(3) - vi.powi(3))
    }
}

// --- loaders -----------------------------------------------------------------

fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::Io(path.display().to_string(), e))
}

fn parse_f64(file: &str, line: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    let v: f64 = raw.trim().parse().map_err(|_| DataError::Parse {
        file: file.to_string(),
        line,
        column: column.to_string(),
        message: format!("not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Parse {
            file: file.to_string(),
            line,
            column: column.to_string(),
            message: format!("not finite: {raw:?}"),
        });
    }
    Ok(v)
}

/// Splits text into `#` directive lines and the remaining CSV body.
fn split_directives(text: &str) -> (BTreeMap<String, String>, usize, String) {
    let mut directives = BTreeMap::new();
    let mut skipped = 0;
    let mut lines = text.lines().peekable();
    while let Some(l) = lines.peek() {
        let t = l.trim();
        if let Some(rest) = t.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                directives.insert(k.trim().to_string(), v.trim().to_string());
            }
            skipped += 1;
            lines.next();
        } else {
            break;
        }
    }
    let body: Vec<&str> = lines.collect();
    (directives, skipped, body.join("\n"))
}

struct CsvTable {
    header: Vec<String>,
    /// (line number in file, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(file: &str, body: &str, first_line: usize) -> Result<CsvTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| DataError::Invalid { file: file.into(), message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize + first_line).unwrap_or(0);
            DataError::Parse { file: file.into(), line, column: String::new(), message: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize + first_line).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(CsvTable { header, rows })
}

fn column(file: &str, header: &[String], name: &str) -> Result<usize, DataError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::Invalid { file: file.into(), message: format!("missing column `{name}`") })
}

pub fn load_sites(path: &Path) -> Result<Vec<WindFarmSite>, DataError> {
    parse_sites(&path.display().to_string(), &read_to_string(path)?)
}

pub fn parse_sites(file: &str, text: &str) -> Result<Vec<WindFarmSite>, DataError> {
    let (_, skipped, body) = split_directives(text);
    let table = read_csv(file, &body, skipped)?;
    let names = ["site_id", "name", "lon", "lat", "capacity_mw", "interconnect_mw"];
    let idx: Vec<usize> = names.iter().map(|n| column(file, &table.header, n)).collect::<Result<_, _>>()?;
    let mut sites = Vec::with_capacity(table.rows.len());
    for (line, f) in &table.rows {
        let num = |k: usize| parse_f64(file, *line, names[k], &f[idx[k]]);
        let site = WindFarmSite {
            site_id: f[idx[0]].clone(),
            name: f[idx[1]].clone(),
            lon: num(2)?,
            lat: num(3)?,
            capacity_mw: num(4)?,
            interconnect_mw: num(5)?,
        };
        site.check().map_err(|message| DataError::Range { file: file.into(), line: *line, message })?;
        if sites.iter().any(|s: &WindFarmSite| s.site_id == site.site_id) {
            return Err(DataError::Range {
                file: file.into(),
                line: *line,
                message: format!("duplicate site_id {}", site.site_id),
            });
        }
        sites.push(site);
    }
    Ok(sites)
}

pub fn write_sites(sites: &[WindFarmSite]) -> String {
    let mut out = String::from("site_id,name,lon,lat,capacity_mw,interconnect_mw\n");
    for s in sites {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.site_id,
            s.name,
            fmt_f64(s.lon),
            fmt_f64(s.lat),
            fmt_f64(s.capacity_mw),
            fmt_f64(s.interconnect_mw)
        );
    }
    out
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|n| Utc.from_utc_datetime(&n))
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn load_history(path: &Path, site_id: &str) -> Result<HistoricalRecord, DataError> {
    parse_history(&path.display().to_string(), &read_to_string(path)?, site_id)
}

pub fn parse_history(file: &str, text: &str, site_id: &str) -> Result<HistoricalRecord, DataError> {
    let (directives, skipped, body) = split_directives(text);
    let table = read_csv(file, &body, skipped)?;
    let h = &table.header;
    let c_site = column(file, h, "site_id")?;
    let c_ts = column(file, h, "timestamp_utc")?;
    let c_wind = column(file, h, "wind_ms")?;
    let c_da = column(file, h, "da_usd_mwh")?;
    let c_rt = column(file, h, "rt_usd_mwh")?;
    let reserve_col = h.iter().position(|x| x == "res_usd_mw");
    let reserve_const = match (reserve_col, directives.get("res_usd_mw")) {
        (Some(_), _) => None,
        (None, Some(v)) => Some(parse_f64(file, 1, "res_usd_mw", v)?),
        (None, None) => {
            return Err(DataError::Invalid {
                file: file.into(),
                message: "missing column `res_usd_mw` and no `# res_usd_mw=` fallback".into(),
            })
        }
    };

    let mut rec = HistoricalRecord {
        site_id: site_id.to_string(),
        start_utc: String::new(),
        wind_ms: vec![],
        da_usd_mwh: vec![],
        rt_usd_mwh: vec![],
        res_usd_mw: vec![],
    };
    let mut prev: Option<DateTime<Utc>> = None;
    for (line, f) in table.rows.iter().filter(|(_, f)| f[c_site] == site_id) {
        let line = *line;
        let ts = parse_timestamp(&f[c_ts]).ok_or_else(|| DataError::Parse {
            file: file.into(),
            line,
            column: "timestamp_utc".into(),
            message: format!("bad timestamp {:?}", f[c_ts]),
        })?;
        match prev {
            None => rec.start_utc = rfc3339(ts),
            Some(p) => {
                let expected = p + Duration::hours(1);
                if ts > expected {
                    return Err(DataError::Gap { file: file.into(), site_id: site_id.into(), missing: rfc3339(expected) });
                }
                if ts < expected {
                    return Err(DataError::Parse {
                        file: file.into(),
                        line,
                        column: "timestamp_utc".into(),
                        message: format!("timestamp {} does not follow {}", rfc3339(ts), rfc3339(p)),
                    });
                }
            }
        }
        prev = Some(ts);
        let wind = parse_f64(file, line, "wind_ms", &f[c_wind])?;
        if wind < 0.0 {
            return Err(DataError::Range { file: file.into(), line, message: format!("negative wind speed {wind}") });
        }
        rec.wind_ms.push(wind);
        rec.da_usd_mwh.push(parse_f64(file, line, "da_usd_mwh", &f[c_da])?);
        rec.rt_usd_mwh.push(parse_f64(file, line, "rt_usd_mwh", &f[c_rt])?);
        rec.res_usd_mw.push(match (reserve_col, reserve_const) {
            (Some(c), _) => parse_f64(file, line, "res_usd_mw", &f[c])?,
            (None, Some(v)) => v,
            (None, None) => unreachable!(),
        });
    }
    if rec.wind_ms.is_empty() {
        return Err(DataError::Invalid { file: file.into(), message: format!("no rows for site {site_id}") });
    }
    if rec.hours() % HOURS_PER_DAY != 0 {
        return Err(DataError::Invalid {
            file: file.into(),
            message: format!("site {site_id} has {} hours, not a whole number of days", rec.hours()),
        });
    }
    Ok(rec)
}

pub fn write_history(records: &[HistoricalRecord]) -> String {
    let mut out = String::from("site_id,timestamp_utc,wind_ms,da_usd_mwh,rt_usd_mwh,res_usd_mw\n");
    for r in records {
        let start = r.start().expect("valid start");
        for i in 0..r.hours() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.site_id,
                rfc3339(start + Duration::hours(i as i64)),
                fmt_f64(r.wind_ms[i]),
                fmt_f64(r.da_usd_mwh[i]),
                fmt_f64(r.rt_usd_mwh[i]),
                fmt_f64(r.res_usd_mw[i])
            );
        }
    }
    out
}

// --- battery catalog -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PerDuration {
    Flat(f64),
    ByDuration(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PerChemistry<T> {
    Shared(T),
    ByChemistry(BTreeMap<String, T>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactoredCatalog {
    chemistries: Vec<String>,
    durations_h: Vec<f64>,
    ratings_mw: Vec<f64>,
    cost_usd_per_kw: PerChemistry<PerDuration>,
    rte: PerChemistry<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitCatalog {
    batteries: Vec<BatteryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn load_battery_catalog(path: &Path) -> Result<Vec<BatteryConfig>, DataError> {
    parse_battery_catalog(&path.display().to_string(), &read_to_string(path)?)
}

pub fn parse_battery_catalog(file: &str, text: &str) -> Result<Vec<BatteryConfig>, DataError> {
    let invalid = |message: String| DataError::Invalid { file: file.into(), message };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DataError::Parse {
        file: file.into(),
        line: e.line(),
        column: e.column().to_string(),
        message: e.to_string(),
    })?;
    let configs = if value.get("batteries").is_some() {
        let cat: ExplicitCatalog = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        cat.batteries
    } else {
        let cat: FactoredCatalog = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        let mut out = Vec::new();
        for chem in &cat.chemistries {
            let rte = match &cat.rte {
                PerChemistry::Shared(v) => *v,
                PerChemistry::ByChemistry(m) => {
                    *m.get(chem).ok_or_else(|| invalid(format!("no rte for chemistry {chem}")))?
                }
            };
            let cost_spec = match &cat.cost_usd_per_kw {
                PerChemistry::Shared(v) => v,
                PerChemistry::ByChemistry(m) => {
                    m.get(chem).ok_or_else(|| invalid(format!("no cost for chemistry {chem}")))?
                }
            };
            for &d in &cat.durations_h {
                let cost = match cost_spec {
                    PerDuration::Flat(v) => *v,
                    PerDuration::ByDuration(m) => *m
                        .get(&fmt_f64(d))
                        .ok_or_else(|| invalid(format!("no cost for {chem} at {} h", fmt_f64(d))))?,
                };
                for &r in &cat.ratings_mw {
                    out.push(BatteryConfig {
                        config_id: format!("{}-{}h-{}mw", slug(chem), fmt_f64(d), fmt_f64(r)),
                        chemistry: chem.clone(),
                        duration_h: d,
                        rating_mw: r,
                        cost_usd_per_kw: cost,
                        rte,
                    });
                }
            }
        }
        out
    };
    for (i, c) in configs.iter().enumerate() {
        c.check()
            .map_err(|message| DataError::Range { file: file.into(), line: i + 1, message: format!("{}: {message}", c.config_id) })?;
    }
    Ok(configs)
}

/// Explicit-form catalog text.
pub fn write_battery_catalog(configs: &[BatteryConfig]) -> String {
    let cat = ExplicitCatalog { batteries: configs.to_vec(), note: None };
    serde_json::to_string_pretty(&cat).expect("catalog serializes")
}

/// Factored catalog text.
pub fn factored_catalog_json(
    chemistries: &[(&str, f64, &[(f64, f64)])],
    durations_h: &[f64],
    ratings_mw: &[f64],
    note: &str,
) -> String {
    let cat = FactoredCatalog {
        chemistries: chemistries.iter().map(|c| c.0.to_string()).collect(),
        durations_h: durations_h.to_vec(),
        ratings_mw: ratings_mw.to_vec(),
        cost_usd_per_kw: PerChemistry::ByChemistry(
            chemistries
                .iter()
                .map(|(name, _, costs)| {
                    (name.to_string(), PerDuration::ByDuration(costs.iter().map(|(d, c)| (fmt_f64(*d), *c)).collect()))
                })
                .collect(),
        ),
        rte: PerChemistry::ByChemistry(chemistries.iter().map(|(n, rte, _)| (n.to_string(), *rte)).collect()),
        note: Some(note.to_string()),
    };
    serde_json::to_string_pretty(&cat).expect("catalog serializes")
}

// --- synthetic histories -------------------------------------------------------

/// Seeded stand-in for measured wind and market data.
///
/// Prices follow a diurnal sinusoid peaking in the evening, lowered when the
/// local wind is strong; wind speed and the real-time spread are AR(1)
/// processes. Output depends only on `(site.site_id, seed, n_days)`.
pub fn generate_synthetic_history(site: &WindFarmSite, seed: u64, n_days: usize) -> HistoricalRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(seed, &site.site_id));
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    // per-site character
    let mean_wind = 6.5 + 2.5 * (0.5 + 0.5 * normal().tanh());
    let price_base = 32.0 + 6.0 * normal().tanh();
    let price_amp = 14.0 + 4.0 * normal().tanh();

    let hours = n_days * HOURS_PER_DAY;
    let (mut w_dev, mut spread, mut p_dev) = (0.0f64, 0.0f64, 0.0f64);
    let mut rec = HistoricalRecord {
        site_id: site.site_id.clone(),
        start_utc: "2023-01-01T00:00:00Z".into(),
        wind_ms: Vec::with_capacity(hours),
        da_usd_mwh: Vec::with_capacity(hours),
        rt_usd_mwh: Vec::with_capacity(hours),
        res_usd_mw: Vec::with_capacity(hours),
    };
    let tau = std::f64::consts::TAU;
    for i in 0..hours {
        let hour = (i % HOURS_PER_DAY) as f64;
        w_dev = 0.92 * w_dev + 1.1 * normal();
        let wind = (mean_wind + 1.2 * (tau * (hour - 3.0) / 24.0).cos() + w_dev).max(0.0);
        p_dev = 0.8 * p_dev + 3.0 * normal();
        let da = (price_base + price_amp * (tau * (hour - 13.0) / 24.0).sin() - 0.8 * (wind - mean_wind) + p_dev).max(0.0);
        spread = 0.5 * spread + 5.0 * normal();
        let rt = (da + spread).max(0.0);
        let res = (4.0 + 1.5 * (tau * (hour - 14.0) / 24.0).sin() + 0.5 * normal()).max(0.5);
        rec.wind_ms.push(round_to(wind, 3));
        rec.da_usd_mwh.push(round_to(da, 2));
        rec.rt_usd_mwh.push(round_to(rt, 2));
        rec.res_usd_mw.push(round_to(res, 2));
    }
    rec
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

/// Five illustrative sites used by the demo.
pub fn demo_sites() -> Vec<WindFarmSite> {
    let raw = [
        ("s1", "Coastal A", -124.2, 41.8, 400.0, 350.0),
        ("s2", "Ridge B", -120.6, 35.3, 250.0, 200.0),
        ("s3", "Pass C", -116.6, 33.9, 300.0, 300.0),
        ("s4", "Valley D", -121.8, 38.1, 150.0, 120.0),
        ("s5", "Plateau E", -118.3, 35.0, 500.0, 400.0),
    ];
    raw.iter()
        .map(|(id, name, lon, lat, cap, ic)| WindFarmSite {
            site_id: id.to_string(),
            name: name.to_string(),
            lon: *lon,
            lat: *lat,
            capacity_mw: *cap,
            interconnect_mw: *ic,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_row_maps_fields() {
        let text = "site_id,name,lon,lat,capacity_mw,interconnect_mw\ns1,Coastal A,-124.2,41.8,400,350\n";
        let sites = parse_sites("sites.csv", text).unwrap();
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].lon, -124.2);
        assert_eq!(sites[0].capacity_mw, 400.0);
        assert_eq!(sites[0].name, "Coastal A");
    }

    #[test]
    fn latitude_out_of_range() {
        let text = "site_id,name,lon,lat,capacity_mw,interconnect_mw\ns1,x,10,95,400,350\n";
        match parse_sites("sites.csv", text) {
            Err(DataError::Range { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_row_and_column() {
        let text = "site_id,name,lon,lat,capacity_mw,interconnect_mw\ns1,x,10,40,400,350\ns2,y,abc,40,1,1\n";
        match parse_sites("sites.csv", text) {
            Err(DataError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "lon");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn demo_sites_round_trip() {
        let sites = demo_sites();
        assert_eq!(sites.len(), 5);
        assert_eq!(parse_sites("x", &write_sites(&sites)).unwrap(), sites);
    }

    fn hourly_csv(hours: usize, skip: Option<usize>) -> String {
        let rec = generate_synthetic_history(&demo_sites()[0], 1, hours.div_ceil(24));
        let mut text = write_history(&[rec]);
        if let Some(k) = skip {
            let lines: Vec<&str> = text.lines().collect();
            text = lines
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k + 1)
                .map(|(_, l)| *l)
                .collect::<Vec<_>>()
                .join("\n");
        }
        text
    }

    #[test]
    fn full_year_history() {
        let text = hourly_csv(8760, None);
        let rec = parse_history("h.csv", &text, "s1").unwrap();
        assert_eq!(rec.hours(), 8760);
        assert_eq!(rec.days(), 365);
    }

    #[test]
    fn missing_hour_is_a_gap() {
        let text = hourly_csv(48, Some(7));
        match parse_history("h.csv", &text, "s1") {
            Err(DataError::Gap { missing, .. }) => assert_eq!(missing, "2023-01-01T07:00:00Z"),
            other => panic!("expected gap, got {other:?}"),
        }
    }

    #[test]
    fn ten_days_slice_into_ten_profiles() {
        let text = hourly_csv(240, None);
        let rec = parse_history("h.csv", &text, "s1").unwrap();
        let days = rec.day_profiles(&PowerCurve::default());
        assert_eq!(days.len(), 10);
        assert!(days.iter().all(|d| d.wind.len() == 24 && d.da.len() == 24));
        assert_eq!(days[3].date, "2023-01-04");
        let back = HistoricalRecord::from_days("s1", &rec.start_utc, &days);
        assert_eq!(back, rec);
    }

    #[test]
    fn reserve_fallback_from_header() {
        let text = "# res_usd_mw=5.5\nsite_id,timestamp_utc,wind_ms,da_usd_mwh,rt_usd_mwh\n".to_string()
            + &(0..24)
                .map(|h| format!("s1,2023-01-01T{h:02}:00:00Z,7,30,31\n"))
                .collect::<String>();
        let rec = parse_history("h.csv", &text, "s1").unwrap();
        assert!(rec.res_usd_mw.iter().all(|v| *v == 5.5));

        let no_fallback = text.replacen("# res_usd_mw=5.5\n", "", 1);
        assert!(matches!(parse_history("h.csv", &no_fallback, "s1"), Err(DataError::Invalid { .. })));
    }

    #[test]
    fn partial_day_rejected() {
        let text = "site_id,timestamp_utc,wind_ms,da_usd_mwh,rt_usd_mwh,res_usd_mw\ns1,2023-01-01T00:00:00Z,1,1,1,1\n";
        assert!(matches!(parse_history("h.csv", text, "s1"), Err(DataError::Invalid { .. })));
    }

    #[test]
    fn factored_catalog_expands_to_sixteen() {
        let costs: &[(f64, f64)] = &[(2.0, 300.0), (4.0, 500.0), (6.0, 700.0), (8.0, 900.0)];
        let text = factored_catalog_json(
            &[("chem-a", 0.85, costs), ("chem-b", 0.7, costs)],
            &[2.0, 4.0, 6.0, 8.0],
            &[100.0, 1000.0],
            "illustrative",
        );
        let cat = parse_battery_catalog("b.json", &text).unwrap();
        assert_eq!(cat.len(), 16);
        assert_eq!(cat[0].config_id, "chem-a-2h-100mw");
        assert_eq!(cat[3].cost_usd_per_kw, 500.0);
        assert_eq!(cat[15].chemistry, "chem-b");
        assert_eq!(cat[15].rte, 0.7);
    }

    #[test]
    fn rte_above_one_rejected() {
        let text = r#"{"batteries":[{"config_id":"x","chemistry":"c","duration_h":2,"rating_mw":10,"cost_usd_per_kw":100,"rte":1.2}]}"#;
        assert!(matches!(parse_battery_catalog("b.json", text), Err(DataError::Range { .. })));
    }

    #[test]
    fn explicit_entry_round_trips() {
        let cfg = BatteryConfig {
            config_id: "li-4h".into(),
            chemistry: "li".into(),
            duration_h: 4.0,
            rating_mw: 100.0,
            cost_usd_per_kw: 1234.5,
            rte: 0.88,
        };
        let text = write_battery_catalog(std::slice::from_ref(&cfg));
        assert_eq!(parse_battery_catalog("b.json", &text).unwrap(), vec![cfg]);
    }

    #[test]
    fn power_curve_anchor_points() {
        let c = PowerCurve::new(3.0, 12.0, 25.0).unwrap();
        assert_eq!(wind_to_power(2.0, &c), 0.0);
        assert_eq!(wind_to_power(12.0, &c), 1.0);
        assert_eq!(wind_to_power(26.0, &c), 0.0);
        assert_eq!(wind_to_power(25.0, &c), 0.0);
        assert!((wind_to_power(9.0, &c) - 702.0 / 1701.0).abs() < 1e-12);
        assert!((wind_to_power(9.0, &c) - 0.41270).abs() < 5e-6);
        assert!(PowerCurve::new(12.0, 3.0, 25.0).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let site = &demo_sites()[2];
        let a = generate_synthetic_history(site, 9, 10);
        let b = generate_synthetic_history(site, 9, 10);
        assert_eq!(a, b);
        assert_eq!(a.hours(), 240);
        assert_eq!(write_history(&[a.clone()]), write_history(&[b]));
        assert_ne!(a, generate_synthetic_history(site, 10, 10));
        a.check().unwrap();
    }
}
