//! Battery sizing: model construction, solution and result extraction.

pub mod audit;
pub mod lp;
pub mod model;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::canonical::fmt_f64;
use crate::data::{BatteryConfig, WindFarmSite};
use crate::scenario::{ScenarioSet, ScenarioTree};

pub use lp::{solve_lp, LinearProgram, LpSolution, LpStatus, Relation, SolveError, DEFAULT_TOL};
pub use model::{build_model_a, build_model_b, ModelA, ModelB, TreeInvalid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Economics {
    pub years: u32,
    pub discount_rate: f64,
}

impl Default for Economics {
    fn default() -> Self {
        Economics { years: 30, discount_rate: 0.0 }
    }
}

impl Economics {
    /// Present value of $1 of revenue every day for `years` years:
    /// `sum_{y=1..years} 365 / (1 + r)^y`.
    pub fn annuity(&self) -> f64 {
        (1..=self.years).map(|y| 365.0 / (1.0 + self.discount_rate).powi(y as i32)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetValue {
    pub gross_usd: f64,
    pub cost_usd: f64,
    pub net_usd: f64,
}

pub fn net_value(daily_revenue: f64, battery: &BatteryConfig, p_mw: f64, economics: &Economics) -> NetValue {
    let gross_usd = daily_revenue * economics.annuity();
    let cost_usd = 1000.0 * battery.cost_usd_per_kw * p_mw;
    NetValue { gross_usd, cost_usd, net_usd: gross_usd - cost_usd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StochasticInput {
    Set(ScenarioSet),
    Tree(ScenarioTree),
}

impl StochasticInput {
    pub fn id(&self) -> &str {
        match self {
            StochasticInput::Set(s) => &s.set_id,
            StochasticInput::Tree(t) => &t.tree_id,
        }
    }

    pub fn site(&self) -> &WindFarmSite {
        match self {
            StochasticInput::Set(s) => &s.site,
            StochasticInput::Tree(t) => &t.site,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingCase {
    pub site: WindFarmSite,
    pub battery: BatteryConfig,
    pub input: StochasticInput,
    pub economics: Economics,
}

impl SizingCase {
    pub fn from_set(set: ScenarioSet, battery: BatteryConfig, economics: Economics) -> Self {
        SizingCase { site: set.site.clone(), battery, input: StochasticInput::Set(set), economics }
    }

    pub fn from_tree(tree: ScenarioTree, battery: BatteryConfig, economics: Economics) -> Self {
        SizingCase { site: tree.site.clone(), battery, input: StochasticInput::Tree(tree), economics }
    }

    pub fn check(&self) -> Result<(), DesignError> {
        if self.input.site().site_id != self.site.site_id {
            return Err(DesignError::InvalidCase(format!(
                "stochastic input belongs to site {}, case is for {}",
                self.input.site().site_id,
                self.site.site_id
            )));
        }
        self.site.check().map_err(DesignError::InvalidCase)?;
        self.battery.check().map_err(DesignError::InvalidCase)?;
        if let StochasticInput::Set(set) = &self.input {
            if set.days.is_empty() {
                return Err(DesignError::InvalidCase("scenario set has no days".into()));
            }
            for d in &set.days {
                let t = d.wind.len();
                if t == 0 || d.da.len() != t || d.reserve.len() != t || d.rt.len() != t {
                    return Err(DesignError::InvalidCase(format!("day {} has inconsistent series", d.date)));
                }
            }
        }
        if !(self.economics.discount_rate >= 0.0 && self.economics.discount_rate.is_finite()) {
            return Err(DesignError::InvalidCase("discount rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error(transparent)]
    TreeInvalid(#[from] TreeInvalid),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("instance too large for enumeration: {0}")]
    InstanceTooLarge(String),
}

/// Optimal sizing of one (site, battery, stochastic input) case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub site_id: String,
    pub battery_id: String,
    pub chemistry: String,
    pub duration_h: f64,
    pub rating_mw: f64,
    pub stochastic_id: String,
    pub p_star_mw: f64,
    pub e_star_mwh: f64,
    pub daily_rev_usd: f64,
    pub gross_usd: f64,
    pub cost_usd: f64,
    pub net_usd: f64,
    pub status: LpStatus,
    pub solve_ms: f64,
    pub iterations: Option<u64>,
}

pub const DESIGN_CSV_HEADER: &str = "site_id,battery_id,chemistry,duration_h,rating_mw,stochastic_id,p_star_mw,e_star_mwh,daily_rev_usd,gross_usd,cost_usd,net_usd,status,solve_ms,iterations";

impl DesignResult {
    fn empty(case: &SizingCase, status: LpStatus, solve_ms: f64) -> Self {
        DesignResult {
            site_id: case.site.site_id.clone(),
            battery_id: case.battery.config_id.clone(),
            chemistry: case.battery.chemistry.clone(),
            duration_h: case.battery.duration_h,
            rating_mw: case.battery.rating_mw,
            stochastic_id: case.input.id().to_string(),
            p_star_mw: 0.0,
            e_star_mwh: 0.0,
            daily_rev_usd: 0.0,
            gross_usd: 0.0,
            cost_usd: 0.0,
            net_usd: 0.0,
            status,
            solve_ms,
            iterations: None,
        }
    }

    /// One CSV row in `DESIGN_CSV_HEADER` order. With `with_timing = false`
    /// the wall-clock column is written as `-` so rows are reproducible.
    pub fn csv_row(&self, with_timing: bool) -> String {
        let status = match self.status {
            LpStatus::Optimal => "Optimal",
            LpStatus::Infeasible => "Infeasible",
            LpStatus::Unbounded => "Unbounded",
        };
        [
            self.site_id.clone(),
            self.battery_id.clone(),
            self.chemistry.clone(),
            fmt_f64(self.duration_h),
            fmt_f64(self.rating_mw),
            self.stochastic_id.clone(),
            fmt_f64(self.p_star_mw),
            fmt_f64(self.e_star_mwh),
            fmt_f64(self.daily_rev_usd),
            fmt_f64(self.gross_usd),
            fmt_f64(self.cost_usd),
            fmt_f64(self.net_usd),
            status.to_string(),
            if with_timing { fmt_f64(self.solve_ms) } else { "-".into() },
            self.iterations.map(|i| i.to_string()).unwrap_or_else(|| "-".into()),
        ]
        .join(",")
    }
}

/// Builds the formulation matching the case's stochastic input, solves it
/// and decomposes the optimum into revenue, cost and net value. A
/// non-optimal status is reported in the result, not as an error.
pub fn solve_design(case: &SizingCase) -> Result<DesignResult, DesignError> {
    case.check()?;
    let (lp, p, revenue): (LinearProgram, usize, Box<dyn Fn(&[f64]) -> f64>) = match &case.input {
        StochasticInput::Set(set) => {
            let m = build_model_a(set, &case.battery, &case.economics);
            let (lp, p) = (m.lp.clone(), m.p);
            (lp, p, Box::new(move |x: &[f64]| model::daily_revenue_a(&m, x)))
        }
        StochasticInput::Tree(tree) => {
            let m = build_model_b(tree, &case.battery, &case.economics)?;
            let (lp, p) = (m.lp.clone(), m.p);
            (lp, p, Box::new(move |x: &[f64]| model::daily_revenue_b(&m, x)))
        }
    };
    let sol = solve_lp(&lp, DEFAULT_TOL)?;
    if sol.status != LpStatus::Optimal {
        return Ok(DesignResult::empty(case, sol.status, sol.solve_ms));
    }
    let p_star = sol.x[p].clamp(0.0, case.battery.rating_mw);
    let daily = revenue(&sol.x);
    let nv = net_value(daily, &case.battery, p_star, &case.economics);
    Ok(DesignResult {
        p_star_mw: p_star,
        e_star_mwh: p_star * case.battery.duration_h,
        daily_rev_usd: daily,
        gross_usd: nv.gross_usd,
        cost_usd: nv.cost_usd,
        net_usd: nv.net_usd,
        iterations: sol.iterations,
        ..DesignResult::empty(case, LpStatus::Optimal, sol.solve_ms)
    })
}

/// Small hand-checkable instances.
pub mod fixtures {
    use super::*;
    use crate::data::DayProfile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn site(capacity: f64, interconnect: f64) -> WindFarmSite {
        WindFarmSite {
            site_id: "h".into(),
            name: "hand".into(),
            lon: 0.0,
            lat: 0.0,
            capacity_mw: capacity,
            interconnect_mw: interconnect,
        }
    }

    pub fn battery(cost: f64, rte: f64, duration: f64, rating: f64) -> BatteryConfig {
        BatteryConfig {
            config_id: "b".into(),
            chemistry: "c".into(),
            duration_h: duration,
            rating_mw: rating,
            cost_usd_per_kw: cost,
            rte,
        }
    }

    pub fn day(wind: &[f64], da: &[f64], reserve: &[f64]) -> DayProfile {
        DayProfile {
            date: "2023-01-01".into(),
            day_index: 0,
            wind: wind.to_vec(),
            wind_ms: vec![0.0; wind.len()],
            da: da.to_vec(),
            rt: da.to_vec(),
            reserve: reserve.to_vec(),
        }
    }

    pub fn set(site: WindFarmSite, days: Vec<DayProfile>) -> ScenarioSet {
        ScenarioSet { set_id: "h-set00".into(), site, seed: 0, k: days.len(), days }
    }

    /// Two hours: free wind in hour 1, $100 in hour 2; 1 MW / 1 h battery.
    pub fn hand_case(cost: f64) -> SizingCase {
        let s = site(1.0, 10.0);
        SizingCase::from_set(
            set(s, vec![day(&[1.0, 0.0], &[0.0, 100.0], &[0.0, 0.0])]),
            battery(cost, 1.0, 1.0, 1.0),
            Economics::default(),
        )
    }

    /// Random instance with one day of one to three hours.
    pub fn random_tiny_case(seed: u64) -> SizingCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hours = rng.gen_range(1..=3);
        let mut series = |lo: f64, hi: f64| -> Vec<f64> { (0..hours).map(|_| rng.gen_range(lo..hi)).collect() };
        let (wind, da, reserve) = (series(0.0, 1.0), series(-10.0, 120.0), series(0.0, 25.0));
        let s = site(rng.gen_range(1.0..10.0), rng.gen_range(0.5..8.0));
        let b = battery(
            rng.gen_range(0.0..800.0),
            rng.gen_range(0.6..1.0),
            [1.0, 2.0, 4.0][rng.gen_range(0..3)],
            rng.gen_range(0.0..5.0),
        );
        SizingCase::from_set(set(s, vec![day(&wind, &da, &reserve)]), b, Economics::default())
    }

    /// A (1,1) tree built from a history whose real-time prices equal the
    /// day-ahead prices, and the one-day set holding the same profile.
    pub fn collapse_pair(seed: u64) -> (SizingCase, SizingCase) {
        use crate::data::{generate_synthetic_history, PowerCurve, SiteHistory};
        use crate::scenario::{build_scenario_tree, KMeansConfig};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = site(rng.gen_range(20.0..200.0), rng.gen_range(10.0..150.0));
        s.site_id = format!("c{seed}");
        let mut record = generate_synthetic_history(&s, seed, rng.gen_range(2..8));
        record.rt_usd_mwh = record.da_usd_mwh.clone();
        let history = SiteHistory { site: s.clone(), record };
        let tree = build_scenario_tree(&history, &PowerCurve::default(), (1, 1), seed, &KMeansConfig::default()).expect("tree");
        let leaf = tree.leaves().next().expect("one leaf").node_id;
        let inputs = model::leaf_inputs(&tree, leaf).expect("leaf inputs");
        let profile = DayProfile {
            date: "centroid".into(),
            day_index: 0,
            wind_ms: vec![0.0; inputs.wind.len()],
            wind: inputs.wind,
            da: inputs.da,
            rt: inputs.rt,
            reserve: inputs.reserve,
        };
        let b = battery(rng.gen_range(0.0..1500.0), rng.gen_range(0.6..1.0), [2.0, 4.0, 6.0, 8.0][rng.gen_range(0..4)], 100.0);
        let a = SizingCase::from_set(set(s, vec![profile]), b.clone(), Economics::default());
        (a, SizingCase::from_tree(tree, b, Economics::default()))
    }
}
