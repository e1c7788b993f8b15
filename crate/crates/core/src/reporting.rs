//! Consolidated design tables and per-site bar charts.
//!
//! The consolidated CSV holds one row per design result followed by a
//! `# aggregates` section with mean and sample standard deviation of E* per
//! (site, chemistry, duration, rating). Charts are SVG and carry their data
//! as JSON inside an XML comment so tests can read the values back.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::canonical::fmt_f64;
use crate::optimizer::{DesignResult, DESIGN_CSV_HEADER};

pub const AGGREGATES_MARKER: &str = "# aggregates";
pub const AGGREGATES_HEADER: &str = "site_id,chemistry,duration_h,rating_mw,n,mean_e_star_mwh,std_e_star_mwh";
const DATA_ISLAND_TAG: &str = "cameo-plot-data";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("no design results to consolidate")]
    EmptyInput,
    #[error("site {0} does not appear in the table")]
    UnknownSite(String),
    #[error("malformed plot data: {0}")]
    PlotData(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub site_id: String,
    pub chemistry: String,
    pub duration_h: f64,
    pub rating_mw: f64,
    pub n: usize,
    pub mean_e_star_mwh: f64,
    pub std_e_star_mwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    /// Sorted by grouping keys, then stochastic id.
    pub rows: Vec<DesignResult>,
    pub groups: Vec<GroupStats>,
}

fn group_cmp(a: &DesignResult, b: &DesignResult) -> Ordering {
    a.site_id
        .cmp(&b.site_id)
        .then_with(|| a.chemistry.cmp(&b.chemistry))
        .then_with(|| a.duration_h.total_cmp(&b.duration_h))
        .then_with(|| a.rating_mw.total_cmp(&b.rating_mw))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn consolidate_results(results: &[DesignResult]) -> Result<SummaryTable, ReportError> {
    if results.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut rows = results.to_vec();
    rows.sort_by(|a, b| {
        group_cmp(a, b)
            .then_with(|| a.stochastic_id.cmp(&b.stochastic_id))
            .then_with(|| a.battery_id.cmp(&b.battery_id))
    });
    let mut groups = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && group_cmp(&rows[start], &rows[end]) == Ordering::Equal {
            end += 1;
        }
        let e: Vec<f64> = rows[start..end].iter().map(|r| r.e_star_mwh).collect();
        let (mean, std) = mean_std(&e);
        let r = &rows[start];
        groups.push(GroupStats {
            site_id: r.site_id.clone(),
            chemistry: r.chemistry.clone(),
            duration_h: r.duration_h,
            rating_mw: r.rating_mw,
            n: e.len(),
            mean_e_star_mwh: mean,
            std_e_star_mwh: std,
        });
        start = end;
    }
    Ok(SummaryTable { rows, groups })
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(DESIGN_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row(false));
            out.push('\n');
        }
        out.push_str(AGGREGATES_MARKER);
        out.push('\n');
        out.push_str(AGGREGATES_HEADER);
        out.push('\n');
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                g.site_id,
                g.chemistry,
                fmt_f64(g.duration_h),
                fmt_f64(g.rating_mw),
                g.n,
                fmt_f64(g.mean_e_star_mwh),
                fmt_f64(g.std_e_star_mwh)
            );
        }
        out
    }

    pub fn sites(&self) -> Vec<String> {
        let mut s: Vec<String> = self.groups.iter().map(|g| g.site_id.clone()).collect();
        s.dedup();
        s
    }
}

/// Splits a consolidated CSV into raw rows and aggregate rows, each as
/// string fields. Used to recompute aggregates independently.
pub fn split_consolidated_csv(text: &str) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    let mut aggs = Vec::new();
    let mut in_aggs = false;
    for line in text.lines() {
        if line == AGGREGATES_MARKER {
            in_aggs = true;
            continue;
        }
        if line == DESIGN_CSV_HEADER || line == AGGREGATES_HEADER || line.is_empty() {
            continue;
        }
        let fields = line.split(',').map(str::to_string).collect();
        if in_aggs {
            aggs.push(fields);
        } else {
            rows.push(fields);
        }
    }
    (rows, aggs)
}

// --- plots -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub site_id: String,
    pub y_label: String,
    pub groups: Vec<GroupStats>,
}

const PANEL_W: f64 = 440.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const LEGEND_H: f64 = 56.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn sorted_unique(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Round up to 1, 2 or 5 times a power of ten.
fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

fn label(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

/// Grouped bar chart of mean E* for one site: a panel per chemistry,
/// duration groups on the x axis and one bar series per power rating.
pub fn render_design_plot(table: &SummaryTable, site_id: &str) -> Result<String, ReportError> {
    let groups: Vec<GroupStats> = table.groups.iter().filter(|g| g.site_id == site_id).cloned().collect();
    if groups.is_empty() {
        return Err(ReportError::UnknownSite(site_id.to_string()));
    }
    let mut chemistries: Vec<String> = groups.iter().map(|g| g.chemistry.clone()).collect();
    chemistries.sort();
    chemistries.dedup();
    let durations = sorted_unique(groups.iter().map(|g| g.duration_h).collect());
    let ratings = sorted_unique(groups.iter().map(|g| g.rating_mw).collect());
    let y_max = nice_ceiling(
        groups
            .iter()
            .map(|g| g.mean_e_star_mwh + if g.n > 1 { g.std_e_star_mwh } else { 0.0 })
            .fold(0.0, f64::max)
            * 1.08,
    );

    let width = PANEL_W * chemistries.len() as f64;
    let height = PANEL_H + LEGEND_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let data = PlotData { site_id: site_id.to_string(), y_label: "E* (MWh)".into(), groups: groups.clone() };
    let mut json = serde_json::to_string(&data).expect("plot data serializes");
    while json.contains("--") {
        json = json.replace("--", "-\\u002d");
    }
    let _ = writeln!(svg, "<!-- {DATA_ISLAND_TAG} {json} -->");
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let y_of = |v: f64| MARGIN_T + plot_h * (1.0 - v / y_max);
    for (pi, chem) in chemistries.iter().enumerate() {
        let x0 = pi as f64 * PANEL_W;
        let _ = writeln!(svg, r#"<g class="panel" data-chemistry="{}" transform="translate({x0},0)">"#, xml_escape(chem));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="13">{} / {}</text>"#,
            MARGIN_L + plot_w / 2.0,
            xml_escape(site_id),
            xml_escape(chem)
        );
        for k in 0..=5 {
            let v = y_max * k as f64 / 5.0;
            let y = y_of(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_L + plot_w,
                MARGIN_L - 6.0,
                y + 4.0,
                label(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN_L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/><line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.2}" stroke="black"/>"#,
            MARGIN_T + plot_h,
            MARGIN_L + plot_w,
            MARGIN_T + plot_h,
            MARGIN_T + plot_h
        );
        let _ = writeln!(
            svg,
            r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">E* (MWh)</text>"#,
            MARGIN_T + plot_h / 2.0
        );

        let slot = plot_w / durations.len() as f64;
        let bar_w = slot * 0.8 / ratings.len() as f64;
        for (di, d) in durations.iter().enumerate() {
            let gx = MARGIN_L + slot * di as f64 + slot * 0.1;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} h</text>"#,
                gx + slot * 0.4,
                MARGIN_T + plot_h + 16.0,
                fmt_f64(*d)
            );
            for (ri, r) in ratings.iter().enumerate() {
                let Some(g) = groups.iter().find(|g| &g.chemistry == chem && g.duration_h == *d && g.rating_mw == *r)
                else {
                    continue;
                };
                let x = gx + bar_w * ri as f64;
                let top = y_of(g.mean_e_star_mwh);
                let _ = writeln!(
                    svg,
                    r#"<rect class="bar" x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} h, {} MW: mean {} MWh, n {}</title></rect>"#,
                    bar_w * 0.92,
                    (MARGIN_T + plot_h - top).max(0.0),
                    PALETTE[ri % PALETTE.len()],
                    fmt_f64(*d),
                    fmt_f64(*r),
                    fmt_f64(g.mean_e_star_mwh),
                    g.n
                );
                let cx = x + bar_w * 0.46;
                let mut label_y = top - 4.0;
                if g.n > 1 {
                    let (lo, hi) = (y_of((g.mean_e_star_mwh - g.std_e_star_mwh).max(0.0)), y_of(g.mean_e_star_mwh + g.std_e_star_mwh));
                    let _ = writeln!(
                        svg,
                        r#"<g class="errorbar" stroke="black"><line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}"/><line x1="{:.2}" y1="{hi:.2}" x2="{:.2}" y2="{hi:.2}"/><line x1="{:.2}" y1="{lo:.2}" x2="{:.2}" y2="{lo:.2}"/></g>"#,
                        cx - 3.0,
                        cx + 3.0,
                        cx - 3.0,
                        cx + 3.0
                    );
                    label_y = label_y.min(hi - 4.0);
                }
                let _ = writeln!(
                    svg,
                    r#"<text class="bar-label" x="{cx:.2}" y="{label_y:.2}" text-anchor="middle" font-size="9">{}</text>"#,
                    label(g.mean_e_star_mwh)
                );
            }
        }
        svg.push_str("</g>\n");
    }

    let ly = PANEL_H + 10.0;
    for (ri, r) in ratings.iter().enumerate() {
        let lx = MARGIN_L + 130.0 * ri as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{} MW rating</text>"#,
            PALETTE[ri % PALETTE.len()],
            lx + 18.0,
            ly + 10.0,
            fmt_f64(*r)
        );
    }
    let any_bars = groups.iter().any(|g| g.n > 1);
    let note = if any_bars { "error bars: \u{b1}1 sample std across stochastic inputs" } else { "single stochastic input per group: no error bars" };
    let _ = writeln!(svg, r##"<text x="{MARGIN_L}" y="{}" fill="#555">{note}</text>"##, ly + 34.0);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads the data block embedded by `render_design_plot`.
pub fn read_plot_data(svg: &str) -> Result<PlotData, ReportError> {
    let open = format!("<!-- {DATA_ISLAND_TAG} ");
    let start = svg.find(&open).ok_or_else(|| ReportError::PlotData("no data block".into()))? + open.len();
    let end = svg[start..].find(" -->").ok_or_else(|| ReportError::PlotData("unterminated data block".into()))? + start;
    serde_json::from_str(&svg[start..end]).map_err(|e| ReportError::PlotData(e.to_string()))
}

pub fn plot_file_name(site_id: &str) -> String {
    format!("design_{site_id}.svg")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::LpStatus;

    pub fn result(site: &str, chem: &str, d: f64, r: f64, sid: &str, e: f64) -> DesignResult {
        DesignResult {
            site_id: site.into(),
            battery_id: format!("{chem}-{d}h-{r}mw"),
            chemistry: chem.into(),
            duration_h: d,
            rating_mw: r,
            stochastic_id: sid.into(),
            p_star_mw: e / d,
            e_star_mwh: e,
            daily_rev_usd: 1.0,
            gross_usd: 10950.0,
            cost_usd: 0.0,
            net_usd: 10950.0,
            status: LpStatus::Optimal,
            solve_ms: 3.5,
            iterations: None,
        }
    }

    fn sweep(sets: usize) -> Vec<DesignResult> {
        let mut out = Vec::new();
        for site in ["s1", "s2", "s3", "s4", "s5"] {
            for chem in ["chem-x", "chem-y"] {
                for d in [2.0, 4.0, 6.0, 8.0] {
                    for r in [100.0, 1000.0] {
                        for s in 0..sets {
                            out.push(result(site, chem, d, r, &format!("{site}-set{s:02}"), d * (s as f64 + 1.0)));
                        }
                    }
                }
            }
        }
        out.reverse();
        out
    }

    #[test]
    fn formulation_a_shape() {
        let t = consolidate_results(&sweep(10)).unwrap();
        assert_eq!(t.rows.len(), 800);
        assert_eq!(t.groups.len(), 80);
        assert!(t.groups.iter().all(|g| g.n == 10));
        let csv = t.to_csv();
        let (rows, aggs) = split_consolidated_csv(&csv);
        assert_eq!((rows.len(), aggs.len()), (800, 80));
        assert!(rows[0][5] == "s1-set00" && rows[0][13] == "-");
    }

    #[test]
    fn single_result_zero_std() {
        let t = consolidate_results(&[result("s1", "c", 2.0, 100.0, "t", 7.0)]).unwrap();
        assert_eq!(t.groups.len(), 1);
        assert_eq!(t.groups[0].std_e_star_mwh, 0.0);
        assert_eq!(consolidate_results(&[]), Err(ReportError::EmptyInput));
    }

    #[test]
    fn aggregate_values() {
        let rs = [result("s", "c", 2.0, 1.0, "a", 1.0), result("s", "c", 2.0, 1.0, "b", 2.0), result("s", "c", 2.0, 1.0, "c", 3.0)];
        let g = &consolidate_results(&rs).unwrap().groups[0];
        assert_eq!((g.mean_e_star_mwh, g.std_e_star_mwh), (2.0, 1.0));
    }

    #[test]
    fn plot_panels_bars_and_data_island() {
        let t = consolidate_results(&sweep(10)).unwrap();
        let svg = render_design_plot(&t, "s2").unwrap();
        assert_eq!(svg.matches(r#"<g class="panel""#).count(), 2);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 16);
        assert_eq!(svg.matches(r#"class="errorbar""#).count(), 16);
        let data = read_plot_data(&svg).unwrap();
        let expect: Vec<GroupStats> = t.groups.iter().filter(|g| g.site_id == "s2").cloned().collect();
        assert_eq!(data.groups, expect);
        assert!(matches!(render_design_plot(&t, "nope"), Err(ReportError::UnknownSite(_))));
    }

    #[test]
    fn single_input_groups_have_no_error_bars() {
        let t = consolidate_results(&sweep(1)).unwrap();
        let svg = render_design_plot(&t, "s1").unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 16);
        assert_eq!(svg.matches(r#"class="errorbar""#).count(), 0);
    }

    #[test]
    fn zero_bar_still_labelled() {
        let t = consolidate_results(&[result("s1", "c", 2.0, 100.0, "t", 0.0)]).unwrap();
        let svg = render_design_plot(&t, "s1").unwrap();
        assert!(svg.contains(r#"height="0.00""#));
        assert_eq!(svg.matches(r#"class="bar-label""#).count(), 1);
    }

    #[test]
    fn double_dash_escaped_in_comment() {
        let t = consolidate_results(&[result("s--1", "c--x", 2.0, 100.0, "t", 1.0)]).unwrap();
        let svg = render_design_plot(&t, "s--1").unwrap();
        let comment = svg.lines().find(|l| l.starts_with("<!--")).unwrap();
        assert!(!comment[4..comment.len() - 3].contains("--"));
        assert_eq!(read_plot_data(&svg).unwrap().site_id, "s--1");
    }
}
