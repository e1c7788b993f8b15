//! Sizing models for the two stochastic formulations.
//!
//! Shared physics per operating day (hour `t`, step 1 h, one-way efficiency
//! `eta = sqrt(rte)`, energy capacity `E = duration * P`):
//!
//! ```text
//! u + c <= w            charging only from wind
//! u + g <= I            export limit at the interconnection
//! c <= P, g <= P
//! e[t] <= duration * P  for every SoC node t = 0..=T
//! e[t+1] = e[t] + eta*c - g/eta
//! e[0] = e[T] = E/2
//! r + g <= P            reserve headroom
//! r <= eta * e[t+1]     reserve backed by one hour of stored energy
//! ```

use crate::data::{BatteryConfig, WindFarmSite};
use crate::scenario::{NodePayload, ScenarioSet, ScenarioTree};
use crate::validation::ValidationReport;

use super::lp::{LinearProgram, Relation};
use super::Economics;

/// Hourly market and resource inputs of one operating day.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyInputs {
    /// Wind power factor in [0, 1].
    pub wind: Vec<f64>,
    pub da: Vec<f64>,
    pub rt: Vec<f64>,
    pub reserve: Vec<f64>,
}

impl HourlyInputs {
    pub fn hours(&self) -> usize {
        self.wind.len()
    }
}

/// Variable indices of one day's battery operation.
#[derive(Debug, Clone, PartialEq)]
pub struct DayVars {
    pub u: Vec<usize>,
    pub c: Vec<usize>,
    pub g: Vec<usize>,
    pub r: Vec<usize>,
    /// T + 1 state-of-charge nodes.
    pub e: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelA {
    pub lp: LinearProgram,
    pub p: usize,
    pub days: Vec<DayVars>,
    pub inputs: Vec<HourlyInputs>,
    pub annuity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafVars {
    pub node_id: usize,
    /// Index into `ModelB::q`.
    pub stage1: usize,
    pub probability: f64,
    pub vars: DayVars,
    pub inputs: HourlyInputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelB {
    pub lp: LinearProgram,
    pub p: usize,
    /// Day-ahead commitments per stage-1 node and hour.
    pub q: Vec<Vec<usize>>,
    pub leaves: Vec<LeafVars>,
    pub annuity: f64,
}

/// Adds one day of battery operation; `export_value[t]` multiplies `u + g`,
/// `reserve_value[t]` multiplies `r`.
pub fn add_day_block(
    lp: &mut LinearProgram,
    p: usize,
    battery: &BatteryConfig,
    site: &WindFarmSite,
    wind: &[f64],
    export_value: &[f64],
    reserve_value: &[f64],
    label: &str,
) -> DayVars {
    let t_len = wind.len();
    let eta = battery.eta();
    let d = battery.duration_h;
    let inf = f64::INFINITY;
    let mut v = DayVars { u: vec![], c: vec![], g: vec![], r: vec![], e: vec![] };
    for t in 0..=t_len {
        v.e.push(lp.add_var(format!("e[{label},{t}]"), 0.0, 0.0, inf));
    }
    for t in 0..t_len {
        v.u.push(lp.add_var(format!("u[{label},{t}]"), export_value[t], 0.0, inf));
        v.c.push(lp.add_var(format!("c[{label},{t}]"), 0.0, 0.0, inf));
        v.g.push(lp.add_var(format!("g[{label},{t}]"), export_value[t], 0.0, inf));
        v.r.push(lp.add_var(format!("r[{label},{t}]"), reserve_value[t], 0.0, inf));
    }
    lp.add_row(&[(v.e[0], 1.0), (p, -d / 2.0)], Relation::Eq, 0.0);
    lp.add_row(&[(v.e[t_len], 1.0), (p, -d / 2.0)], Relation::Eq, 0.0);
    for t in 0..t_len {
        let (u, c, g, r, e0, e1) = (v.u[t], v.c[t], v.g[t], v.r[t], v.e[t], v.e[t + 1]);
        let w = site.capacity_mw * wind[t];
        lp.add_row(&[(u, 1.0), (c, 1.0)], Relation::Le, w);
        lp.add_row(&[(u, 1.0), (g, 1.0)], Relation::Le, site.interconnect_mw);
        lp.add_row(&[(c, 1.0), (p, -1.0)], Relation::Le, 0.0);
        lp.add_row(&[(g, 1.0), (p, -1.0)], Relation::Le, 0.0);
        lp.add_row(&[(e1, 1.0), (p, -d)], Relation::Le, 0.0);
        lp.add_row(&[(e1, 1.0), (e0, -1.0), (c, -eta), (g, 1.0 / eta)], Relation::Eq, 0.0);
        lp.add_row(&[(r, 1.0), (g, 1.0), (p, -1.0)], Relation::Le, 0.0);
        lp.add_row(&[(r, 1.0), (e1, -eta)], Relation::Le, 0.0);
    }
    v
}

fn size_var(lp: &mut LinearProgram, battery: &BatteryConfig) -> usize {
    lp.add_var("P", -1000.0 * battery.cost_usd_per_kw, 0.0, battery.rating_mw)
}

/// Expected-revenue model over a uniform scenario set; every hour is
/// settled at the day-ahead price.
pub fn build_model_a(set: &ScenarioSet, battery: &BatteryConfig, economics: &Economics) -> ModelA {
    let annuity = economics.annuity();
    let k = set.days.len() as f64;
    let mut lp = LinearProgram::new();
    let p = size_var(&mut lp, battery);
    let mut days = Vec::with_capacity(set.days.len());
    let mut inputs = Vec::with_capacity(set.days.len());
    for (s, day) in set.days.iter().enumerate() {
        let export: Vec<f64> = day.da.iter().map(|price| annuity / k * price).collect();
        let reserve: Vec<f64> = day.reserve.iter().map(|price| annuity / k * price).collect();
        days.push(add_day_block(&mut lp, p, battery, &set.site, &day.wind, &export, &reserve, &format!("{s}")));
        inputs.push(HourlyInputs { wind: day.wind.clone(), da: day.da.clone(), rt: day.rt.clone(), reserve: day.reserve.clone() });
    }
    ModelA { lp, p, days, inputs, annuity }
}

/// Realized inputs at a leaf: day-ahead price and wind centroid of the
/// parent, wind deviation added and clamped to [0, 1].
pub fn leaf_inputs(tree: &ScenarioTree, leaf: usize) -> Option<HourlyInputs> {
    let node = tree.nodes.get(leaf)?;
    let parent = tree.nodes.get(node.parent?)?;
    let (NodePayload::RealTime { rt, wind_dev, reserve }, NodePayload::DayAhead { da, wind }) =
        (&node.payload, &parent.payload)
    else {
        return None;
    };
    Some(HourlyInputs {
        wind: wind.iter().zip(wind_dev).map(|(w, dv)| (w + dv).clamp(0.0, 1.0)).collect(),
        da: da.clone(),
        rt: rt.clone(),
        reserve: reserve.clone(),
    })
}

#[derive(Debug, thiserror::Error)]
#[error("invalid scenario tree: {}", .0.findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
pub struct TreeInvalid(pub ValidationReport);

/// Multi-stage model: one day-ahead commitment profile per stage-1 node,
/// shared by all of that node's leaves; physical dispatch per leaf with
/// deviations from the commitment settled at the leaf's real-time price.
pub fn build_model_b(tree: &ScenarioTree, battery: &BatteryConfig, economics: &Economics) -> Result<ModelB, TreeInvalid> {
    let report = crate::scenario::validate_tree(tree);
    if !report.is_ok() {
        return Err(TreeInvalid(report));
    }
    let annuity = economics.annuity();
    let mut lp = LinearProgram::new();
    let p = size_var(&mut lp, battery);

    let stage1: Vec<usize> = tree.stage1().map(|n| n.node_id).collect();
    let mut q = Vec::with_capacity(stage1.len());
    for &m in &stage1 {
        let NodePayload::DayAhead { da, .. } = &tree.nodes[m].payload else { unreachable!() };
        q.push(
            (0..da.len())
                .map(|t| lp.add_var(format!("q[{m},{t}]"), 0.0, 0.0, tree.site.interconnect_mw))
                .collect::<Vec<_>>(),
        );
    }

    let mut leaves = Vec::new();
    for leaf in tree.leaves() {
        let inputs = leaf_inputs(tree, leaf.node_id).expect("validated tree");
        let pi = tree.absolute_probability(leaf.node_id);
        let m = stage1.iter().position(|&s| Some(s) == leaf.parent).expect("validated tree");
        let export: Vec<f64> = inputs.rt.iter().map(|price| annuity * pi * price).collect();
        let reserve: Vec<f64> = inputs.reserve.iter().map(|price| annuity * pi * price).collect();
        let vars = add_day_block(
            &mut lp,
            p,
            battery,
            &tree.site,
            &inputs.wind,
            &export,
            &reserve,
            &format!("n{}", leaf.node_id),
        );
        for (t, &qv) in q[m].iter().enumerate() {
            lp.objective[qv] += annuity * pi * (inputs.da[t] - inputs.rt[t]);
        }
        leaves.push(LeafVars { node_id: leaf.node_id, stage1: m, probability: pi, vars, inputs });
    }
    Ok(ModelB { lp, p, q, leaves, annuity })
}

/// Expected daily revenue of a model A solution.
pub fn daily_revenue_a(model: &ModelA, x: &[f64]) -> f64 {
    let k = model.days.len() as f64;
    model
        .days
        .iter()
        .zip(&model.inputs)
        .map(|(v, inp)| {
            (0..inp.hours())
                .map(|t| inp.da[t] * (x[v.u[t]] + x[v.g[t]]) + inp.reserve[t] * x[v.r[t]])
                .sum::<f64>()
        })
        .sum::<f64>()
        / k
}

/// Expected daily revenue of a model B solution.
pub fn daily_revenue_b(model: &ModelB, x: &[f64]) -> f64 {
    model
        .leaves
        .iter()
        .map(|leaf| {
            let (v, inp) = (&leaf.vars, &leaf.inputs);
            let q = &model.q[leaf.stage1];
            leaf.probability
                * (0..inp.hours())
                    .map(|t| {
                        inp.da[t] * x[q[t]]
                            + inp.rt[t] * (x[v.u[t]] + x[v.g[t]] - x[q[t]])
                            + inp.reserve[t] * x[v.r[t]]
                    })
                    .sum::<f64>()
        })
        .sum()
}
