//! Per-task trace records, per-process statistics and the HTML report.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::canonical::fmt_f64;

pub const TRACE_HEADER: &str =
    "task_id\tprocess\ttag\tstatus\tattempt\tsubmit_ms\tstart_ms\tcomplete_ms\tduration_ms\tcpu_fraction\tpeak_rss_bytes\tcache_hit";
pub const STATS_HEADER: &str = "process,count,metric,min,q1,median,q3,max,mean,std";
const ABSENT: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    Succeeded,
    Failed,
    Cached,
}

impl TraceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceStatus::Succeeded => "Succeeded",
            TraceStatus::Failed => "Failed",
            TraceStatus::Cached => "Cached",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [TraceStatus::Succeeded, TraceStatus::Failed, TraceStatus::Cached].into_iter().find(|t| t.as_str() == s)
    }
}

/// One attempt of one task. Timestamps are UTC milliseconds since the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub task_id: String,
    pub process: String,
    pub tag: String,
    pub status: TraceStatus,
    pub attempt: u32,
    pub submit_ms: u64,
    pub start_ms: u64,
    pub complete_ms: u64,
    pub duration_ms: u64,
    pub cpu_fraction: Option<f64>,
    pub peak_rss_bytes: Option<u64>,
    pub cache_hit: bool,
    /// Kept in the `.outcome` manifest; not a trace column.
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace record {task_id}: {message}")]
    Invariant { task_id: String, message: String },
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no records")]
    Empty,
}

impl TraceRecord {
    pub fn check(&self) -> Result<(), TraceError> {
        let fail = |message: String| Err(TraceError::Invariant { task_id: self.task_id.clone(), message });
        if self.start_ms < self.submit_ms {
            return fail(format!("start {} precedes submit {}", self.start_ms, self.submit_ms));
        }
        if self.complete_ms < self.start_ms {
            return fail(format!("complete {} precedes start {}", self.complete_ms, self.start_ms));
        }
        if self.duration_ms != self.complete_ms - self.start_ms {
            return fail(format!("duration {} != complete - start", self.duration_ms));
        }
        if self.attempt == 0 {
            return fail("attempt numbers start at 1".into());
        }
        if self.cache_hit != (self.status == TraceStatus::Cached) {
            return fail("cache_hit must match status Cached".into());
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        [
            clean(&self.task_id),
            clean(&self.process),
            if self.tag.is_empty() { ABSENT.into() } else { clean(&self.tag) },
            self.status.as_str().into(),
            self.attempt.to_string(),
            self.submit_ms.to_string(),
            self.start_ms.to_string(),
            self.complete_ms.to_string(),
            self.duration_ms.to_string(),
            self.cpu_fraction.map(fmt_f64).unwrap_or_else(|| ABSENT.into()),
            self.peak_rss_bytes.map(|b| b.to_string()).unwrap_or_else(|| ABSENT.into()),
            self.cache_hit.to_string(),
        ]
        .join("\t")
    }

    pub fn parse_line(line: &str, lineno: usize) -> Result<TraceRecord, TraceError> {
        let err = |message: String| TraceError::Parse { line: lineno, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 12 {
            return Err(err(format!("expected 12 fields, found {}", f.len())));
        }
        let int = |i: usize, name: &str| f[i].parse::<u64>().map_err(|_| err(format!("{name}: not an integer: {:?}", f[i])));
        let rec = TraceRecord {
            task_id: f[0].into(),
            process: f[1].into(),
            tag: if f[2] == ABSENT { String::new() } else { f[2].into() },
            status: TraceStatus::parse(f[3]).ok_or_else(|| err(format!("unknown status {:?}", f[3])))?,
            attempt: int(4, "attempt")? as u32,
            submit_ms: int(5, "submit_ms")?,
            start_ms: int(6, "start_ms")?,
            complete_ms: int(7, "complete_ms")?,
            duration_ms: int(8, "duration_ms")?,
            cpu_fraction: match f[9] {
                ABSENT => None,
                s => Some(s.parse().map_err(|_| err(format!("cpu_fraction: not a number: {s:?}")))?),
            },
            peak_rss_bytes: match f[10] {
                ABSENT => None,
                _ => Some(int(10, "peak_rss_bytes")?),
            },
            cache_hit: match f[11] {
                "true" => true,
                "false" => false,
                s => return Err(err(format!("cache_hit: expected true/false, found {s:?}"))),
            },
            workdir: None,
        };
        Ok(rec)
    }
}

/// Appends one line (with a header when the file is new). Each record goes
/// out in a single write on an append-mode descriptor.
pub fn append_trace(record: &TraceRecord, path: &Path) -> Result<(), TraceError> {
    record.check()?;
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    if file.metadata()?.len() == 0 {
        buf.push_str(TRACE_HEADER);
        buf.push('\n');
    }
    buf.push_str(&record.to_line());
    buf.push('\n');
    file.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        Some(_) => return Err(TraceError::Parse { line: 1, message: "unexpected header".into() }),
        None => return Err(TraceError::Empty),
    }
    lines.filter(|(_, l)| !l.is_empty()).map(|(i, l)| TraceRecord::parse_line(l, i + 1)).collect()
}

// --- statistics ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Duration,
    Cpu,
    Memory,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Duration, Metric::Cpu, Metric::Memory];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Duration => "duration_ms",
            Metric::Cpu => "cpu_fraction",
            Metric::Memory => "peak_rss_bytes",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Duration => "job duration (ms)",
            Metric::Cpu => "CPU usage (fraction of one core, mean over the run)",
            Metric::Memory => "memory (peak bytes)",
        }
    }

    fn value(self, r: &TraceRecord) -> Option<f64> {
        match self {
            Metric::Duration => Some(r.duration_ms as f64),
            Metric::Cpu => r.cpu_fraction,
            Metric::Memory => r.peak_rss_bytes.map(|b| b as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

/// Linear interpolation between order statistics (`h = (n - 1) p`).
pub fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(xs.len() - 1);
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

pub fn summarize(samples: &[f64]) -> Option<Summary> {
    if samples.is_empty() {
        return None;
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    Some(Summary {
        n,
        min: xs[0],
        q1: quantile_sorted(&xs, 0.25),
        median: quantile_sorted(&xs, 0.5),
        q3: quantile_sorted(&xs, 0.75),
        max: xs[n - 1],
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessStats {
    pub process: String,
    /// Executed (non-cached) attempts.
    pub count: usize,
    pub cached: usize,
    pub duration: Option<Summary>,
    pub cpu: Option<Summary>,
    pub memory: Option<Summary>,
    /// Raw samples per metric, for plotting.
    pub samples: [Vec<f64>; 3],
}

impl ProcessStats {
    pub fn metric(&self, m: Metric) -> Option<&Summary> {
        match m {
            Metric::Duration => self.duration.as_ref(),
            Metric::Cpu => self.cpu.as_ref(),
            Metric::Memory => self.memory.as_ref(),
        }
    }
}

pub fn stats_from_records(records: &[TraceRecord]) -> Vec<ProcessStats> {
    let mut order: Vec<String> = Vec::new();
    for r in records {
        if !order.contains(&r.process) {
            order.push(r.process.clone());
        }
    }
    order
        .into_iter()
        .map(|process| {
            let mine: Vec<&TraceRecord> = records.iter().filter(|r| r.process == process).collect();
            let live: Vec<&&TraceRecord> = mine.iter().filter(|r| !r.cache_hit).collect();
            let samples = Metric::ALL.map(|m| live.iter().filter_map(|r| m.value(r)).collect::<Vec<f64>>());
            ProcessStats {
                count: live.len(),
                cached: mine.len() - live.len(),
                duration: summarize(&samples[0]),
                cpu: summarize(&samples[1]),
                memory: summarize(&samples[2]),
                samples,
                process,
            }
        })
        .collect()
}

/// One entry per process, in order of first appearance. Cached lines are
/// counted in `cached` and left out of the metrics.
pub fn aggregate_stats(trace: &Path) -> Result<Vec<ProcessStats>, TraceError> {
    let records = read_trace(trace)?;
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(stats_from_records(&records))
}

fn summary_fields(s: Option<&Summary>) -> [String; 8] {
    match s {
        None => ["0".into(), ABSENT.into(), ABSENT.into(), ABSENT.into(), ABSENT.into(), ABSENT.into(), ABSENT.into(), ABSENT.into()],
        Some(s) => [
            s.n.to_string(),
            fmt_f64(s.min),
            fmt_f64(s.q1),
            fmt_f64(s.median),
            fmt_f64(s.q3),
            fmt_f64(s.max),
            fmt_f64(s.mean),
            fmt_f64(s.std),
        ],
    }
}

/// One row per process and present metric; `count` is the number of
/// samples. Absent metrics have no row.
pub fn stats_csv(stats: &[ProcessStats]) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for p in stats {
        for m in Metric::ALL {
            if p.metric(m).is_none() {
                continue;
            }
            let f = summary_fields(p.metric(m));
            let _ = writeln!(out, "{},{},{},{}", p.process, f[0], m.name(), f[1..].join(","));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub csv: PathBuf,
    pub html: PathBuf,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn box_plot(p: &ProcessStats, m: Metric) -> String {
    const W: f64 = 300.0;
    const H: f64 = 150.0;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let Some(s) = p.metric(m) else {
        let _ = write!(
            svg,
            r##"<rect x="1" y="1" width="{}" height="{}" fill="#f4f4f4" stroke="#ccc"/><text x="{}" y="{}" text-anchor="middle" fill="#777">metric unavailable</text></svg>"##,
            W - 2.0,
            H - 2.0,
            W / 2.0,
            H / 2.0
        );
        return svg;
    };
    let (lo, hi) = if s.max > s.min { (s.min, s.max) } else { (s.min - 0.5, s.max + 0.5) };
    let x = |v: f64| 20.0 + (W - 40.0) * (v - lo) / (hi - lo);
    let (top, bottom, mid) = (40.0, 100.0, 70.0);
    let _ = write!(
        svg,
        r##"<line x1="{:.2}" y1="{mid}" x2="{:.2}" y2="{mid}" stroke="#333"/><line x1="{:.2}" y1="{mid}" x2="{:.2}" y2="{mid}" stroke="#333"/>"##,
        x(s.min),
        x(s.q1),
        x(s.q3),
        x(s.max)
    );
    let _ = write!(
        svg,
        r##"<rect x="{:.2}" y="{top}" width="{:.2}" height="{}" fill="#9ecae1" stroke="#333"/><line x1="{:.2}" y1="{top}" x2="{:.2}" y2="{bottom}" stroke="#08306b" stroke-width="2"/>"##,
        x(s.q1),
        (x(s.q3) - x(s.q1)).max(1.0),
        bottom - top,
        x(s.median),
        x(s.median)
    );
    for (i, v) in p.samples[Metric::ALL.iter().position(|k| *k == m).unwrap()].iter().enumerate() {
        let jitter = ((i * 37) % 23) as f64 - 11.0;
        let _ = write!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#e6550d" fill-opacity="0.5"/>"##, x(*v), 120.0 + jitter / 2.0);
    }
    let _ = write!(
        svg,
        r##"<text x="20" y="{}" font-size="10">{}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{}</text></svg>"##,
        H - 4.0,
        fmt_f64(s.min),
        W - 20.0,
        H - 4.0,
        fmt_f64(s.max)
    );
    svg
}

pub fn render_html(stats: &[ProcessStats], title: &str) -> String {
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title>\n<style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:2px 6px;text-align:right}}.panels{{display:flex;gap:1em}}figure{{margin:0}}</style></head><body>\n<h1>{}</h1>\n",
        esc(title),
        esc(title)
    );
    for p in stats {
        let _ = writeln!(
            h,
            "<section class=\"process\" data-process=\"{}\">\n<h2>{}</h2>\n<p>executed: {}, served from cache: {}</p>",
            esc(&p.process),
            esc(&p.process),
            p.count,
            p.cached
        );
        h.push_str("<table><tr><th>metric</th><th>count</th><th>min</th><th>q1</th><th>median</th><th>q3</th><th>max</th><th>mean</th><th>std</th></tr>\n");
        for m in Metric::ALL {
            let f = summary_fields(p.metric(m));
            let _ = write!(h, "<tr data-metric=\"{}\"><td>{}</td>", m.name(), m.name());
            for (v, col) in f.iter().zip(["count", "min", "q1", "median", "q3", "max", "mean", "std"]) {
                let _ = write!(h, "<td data-col=\"{col}\">{}</td>", esc(v));
            }
            h.push_str("</tr>\n");
        }
        h.push_str("</table>\n<div class=\"panels\">\n");
        for m in Metric::ALL {
            let _ = writeln!(
                h,
                "<figure class=\"panel\" data-metric=\"{}\"><figcaption>{}</figcaption>{}</figure>",
                m.name(),
                esc(m.title()),
                box_plot(p, m)
            );
        }
        h.push_str("</div>\n</section>\n");
    }
    h.push_str("</body></html>\n");
    h
}

/// Writes `stats.csv` and `report.html` into `out_dir`.
pub fn render_provenance_report(stats: &[ProcessStats], trace: &Path, out_dir: &Path) -> Result<ReportBundle, TraceError> {
    if stats.is_empty() {
        return Err(TraceError::Empty);
    }
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("stats.csv");
    let html = out_dir.join("report.html");
    std::fs::write(&csv, stats_csv(stats))?;
    let title = format!("Provenance report: {}", trace.display());
    std::fs::write(&html, render_html(stats, &title))?;
    Ok(ReportBundle { csv, html })
}
