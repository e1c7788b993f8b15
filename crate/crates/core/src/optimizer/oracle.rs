//! Grid-enumeration oracle for tiny scenario-set cases.
//!
//! Every grid point it accepts is feasible for the sizing model, so its best
//! objective is a lower bound on the LP optimum. It shares no code with the
//! model builder.

use std::collections::HashMap;

use super::{net_value, DesignError, DesignResult, LpStatus, SizingCase, StochasticInput};

pub const MAX_DECISION_HOURS: usize = 6;
pub const MAX_GRID: usize = 8;

const FEAS_TOL: f64 = 1e-9;

struct Day<'a> {
    w: Vec<f64>,
    da: &'a [f64],
    reserve: &'a [f64],
}

/// Enumerates the size over `{0, rating/m, ..., rating}` and, per hour,
/// charge and discharge on the same grid. Wind export is set greedily to
/// `min(w - c, I - g)` and reserve to its largest feasible value.
pub fn brute_force_design(case: &SizingCase, m: usize) -> Result<DesignResult, DesignError> {
    case.check()?;
    let StochasticInput::Set(set) = &case.input else {
        return Err(DesignError::InstanceTooLarge("enumeration only supports scenario sets".into()));
    };
    let hours: usize = set.days.iter().map(|d| d.wind.len()).sum();
    if hours > MAX_DECISION_HOURS {
        return Err(DesignError::InstanceTooLarge(format!("{hours} decision hours > {MAX_DECISION_HOURS}")));
    }
    if m == 0 || m > MAX_GRID {
        return Err(DesignError::InstanceTooLarge(format!("grid resolution {m} outside 1..={MAX_GRID}")));
    }

    let battery = &case.battery;
    let rating = battery.rating_mw;
    let step = rating / m as f64;
    let p_grid: Vec<f64> = if rating == 0.0 { vec![0.0] } else { (0..=m).map(|i| i as f64 * step).collect() };
    let days: Vec<Day> = set
        .days
        .iter()
        .map(|d| Day { w: d.wind.iter().map(|f| f * case.site.capacity_mw).collect(), da: &d.da, reserve: &d.reserve })
        .collect();
    let k = days.len() as f64;

    let mut best: Option<(f64, f64, f64)> = None; // (objective, P, daily revenue)
    for &p in &p_grid {
        let mut daily = 0.0;
        let mut feasible = true;
        for day in &days {
            let mut memo = HashMap::new();
            match best_day(day, 0, p * battery.duration_h / 2.0, p, step, m, case, &mut memo) {
                Some(v) => daily += v,
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        daily /= k;
        let objective = net_value(daily, battery, p, &case.economics).net_usd;
        if best.map_or(true, |(b, _, _)| objective > b) {
            best = Some((objective, p, daily));
        }
    }
    let (objective, p, daily) = best.expect("P = 0 with idle battery is always feasible");
    let nv = net_value(daily, battery, p, &case.economics);
    debug_assert!((nv.net_usd - objective).abs() <= 1e-9 * (1.0 + objective.abs()));
    Ok(DesignResult {
        site_id: case.site.site_id.clone(),
        battery_id: battery.config_id.clone(),
        chemistry: battery.chemistry.clone(),
        duration_h: battery.duration_h,
        rating_mw: rating,
        stochastic_id: case.input.id().to_string(),
        p_star_mw: p,
        e_star_mwh: p * battery.duration_h,
        daily_rev_usd: daily,
        gross_usd: nv.gross_usd,
        cost_usd: nv.cost_usd,
        net_usd: nv.net_usd,
        status: LpStatus::Optimal,
        solve_ms: 0.0,
        iterations: None,
    })
}

/// Best revenue from hour `t` onward starting at state of charge `soc`;
/// `None` when the end-of-day target cannot be met.
#[allow(clippy::too_many_arguments)]
fn best_day(
    day: &Day,
    t: usize,
    soc: f64,
    p: f64,
    step: f64,
    m: usize,
    case: &SizingCase,
    memo: &mut HashMap<(usize, i64), Option<f64>>,
) -> Option<f64> {
    let b = &case.battery;
    let capacity = p * b.duration_h;
    let eta = b.rte.sqrt();
    if t == day.w.len() {
        let target = capacity / 2.0;
        return ((soc - target).abs() <= FEAS_TOL * (1.0 + capacity)).then_some(0.0);
    }
    let key = (t, (soc * 1e9).round() as i64);
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let interconnect = case.site.interconnect_mw;
    let mut best: Option<f64> = None;
    let levels: Vec<f64> = if step == 0.0 { vec![0.0] } else { (0..=m).map(|i| i as f64 * step).collect() };
    for &c in levels.iter().filter(|&&c| c <= p + FEAS_TOL && c <= day.w[t] + FEAS_TOL) {
        for &g in levels.iter().filter(|&&g| g <= p + FEAS_TOL && g <= interconnect + FEAS_TOL) {
            let next = soc + eta * c - g / eta;
            if next < -FEAS_TOL || next > capacity + FEAS_TOL {
                continue;
            }
            let next = next.clamp(0.0, capacity);
            let u = (day.w[t] - c).min(interconnect - g).max(0.0);
            let r = if day.reserve[t] > 0.0 { (p - g).min(eta * next).max(0.0) } else { 0.0 };
            let here = day.da[t] * (u + g) + day.reserve[t] * r;
            if let Some(rest) = best_day(day, t + 1, next, p, step, m, case, memo) {
                let total = here + rest;
                if best.map_or(true, |bv| total > bv) {
                    best = Some(total);
                }
            }
        }
    }
    memo.insert(key, best);
    best
}
