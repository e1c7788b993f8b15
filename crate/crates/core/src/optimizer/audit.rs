//! Re-evaluates the physical constraints of a sizing solution directly from
//! the raw solution vector, without looking at the LP rows.

use crate::data::{BatteryConfig, WindFarmSite};

use super::model::{DayVars, HourlyInputs, ModelA, ModelB};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub what: String,
    pub amount: f64,
}

fn check_day(
    out: &mut Vec<Violation>,
    label: &str,
    x: &[f64],
    p: f64,
    v: &DayVars,
    inputs: &HourlyInputs,
    battery: &BatteryConfig,
    site: &WindFarmSite,
    tol: f64,
) {
    let mut flag = |what: String, amount: f64| {
        if amount > tol {
            out.push(Violation { what: format!("{label}: {what}"), amount });
        }
    };
    let eta = battery.rte.sqrt();
    let capacity = p * battery.duration_h;
    let t_len = inputs.wind.len();
    let e = |t: usize| x[v.e[t]];
    flag("initial state of charge".into(), (e(0) - capacity / 2.0).abs());
    flag("final state of charge".into(), (e(t_len) - capacity / 2.0).abs());
    for t in 0..=t_len {
        flag(format!("soc[{t}] below zero"), -e(t));
        flag(format!("soc[{t}] above capacity"), e(t) - capacity);
    }
    for t in 0..t_len {
        let (u, c, g, r) = (x[v.u[t]], x[v.c[t]], x[v.g[t]], x[v.r[t]]);
        for (name, val) in [("u", u), ("c", c), ("g", g), ("r", r)] {
            flag(format!("{name}[{t}] negative"), -val);
        }
        let w = site.capacity_mw * inputs.wind[t];
        flag(format!("wind split at {t}"), u + c - w);
        flag(format!("export limit at {t}"), u + g - site.interconnect_mw);
        flag(format!("charge rate at {t}"), c - p);
        flag(format!("discharge rate at {t}"), g - p);
        flag(format!("soc recursion at {t}"), (e(t + 1) - (e(t) + eta * c - g / eta)).abs());
        flag(format!("reserve headroom at {t}"), r - (p - g));
        flag(format!("reserve backing at {t}"), r - eta * e(t + 1));
    }
}

pub fn audit_model_a(model: &ModelA, x: &[f64], battery: &BatteryConfig, site: &WindFarmSite, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = x[model.p];
    if p < -tol || p > battery.rating_mw + tol {
        out.push(Violation { what: format!("size {p} outside [0, {}]", battery.rating_mw), amount: p.abs() });
    }
    for (s, (v, inputs)) in model.days.iter().zip(&model.inputs).enumerate() {
        check_day(&mut out, &format!("day {s}"), x, p, v, inputs, battery, site, tol);
    }
    out
}

pub fn audit_model_b(model: &ModelB, x: &[f64], battery: &BatteryConfig, site: &WindFarmSite, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = x[model.p];
    if p < -tol || p > battery.rating_mw + tol {
        out.push(Violation { what: format!("size {p} outside [0, {}]", battery.rating_mw), amount: p.abs() });
    }
    for (m, qs) in model.q.iter().enumerate() {
        for (t, &q) in qs.iter().enumerate() {
            let v = x[q];
            if v < -tol || v > site.interconnect_mw + tol {
                out.push(Violation { what: format!("commitment q[{m},{t}] = {v}"), amount: v.abs() });
            }
        }
    }
    for leaf in &model.leaves {
        check_day(&mut out, &format!("leaf {}", leaf.node_id), x, p, &leaf.vars, &leaf.inputs, battery, site, tol);
    }
    out
}

/// Net energy moved into storage over each day of a model A solution
/// (`sum c - sum g` for a lossless battery should equal `e[T] - e[0]`).
pub fn net_charge_by_day(model: &ModelA, x: &[f64]) -> Vec<(f64, f64)> {
    model
        .days
        .iter()
        .map(|v| {
            let charged: f64 = v.c.iter().map(|&j| x[j]).sum();
            let discharged: f64 = v.g.iter().map(|&j| x[j]).sum();
            (charged - discharged, x[*v.e.last().unwrap()] - x[v.e[0]])
        })
        .collect()
}
