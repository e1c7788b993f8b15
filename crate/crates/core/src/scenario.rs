//! Stochastic inputs for the two sizing formulations.
//!
//! A [`ScenarioSet`] is a uniform sample of historical days. A
//! [`ScenarioTree`] has three stages: the root (sizing decision), day-ahead
//! nodes obtained by clustering days on their day-ahead price and wind
//! profile, and real-time leaves obtained by clustering the days inside each
//! day-ahead cluster on real-time price, wind deviation and reserve price.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::canonical::{derive_seed, fmt_f64};
use crate::data::{DayProfile, PowerCurve, SiteHistory, WindFarmSite, HOURS_PER_DAY};
use crate::validation::ValidationReport;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("insufficient data: need {needed} days, history has {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub set_id: String,
    pub site: WindFarmSite,
    pub seed: u64,
    pub k: usize,
    pub days: Vec<DayProfile>,
}

impl ScenarioSet {
    pub fn probability(&self) -> f64 {
        1.0 / self.k as f64
    }
}

/// Draws `n_sets` sets of `n_days` distinct days. Set `i` uses the sub-seed
/// `derive_seed(seed, i)`.
pub fn sample_scenario_sets(
    history: &SiteHistory,
    curve: &PowerCurve,
    n_sets: usize,
    n_days: usize,
    seed: u64,
) -> Result<Vec<ScenarioSet>, ScenarioError> {
    if n_days == 0 {
        return Err(ScenarioError::InvalidParameter("n_days must be at least 1".into()));
    }
    let available = history.record.days();
    if available < n_days {
        return Err(ScenarioError::InsufficientData { needed: n_days, available });
    }
    let days = history.record.day_profiles(curve);
    Ok((0..n_sets)
        .map(|i| {
            let sub = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(sub);
            let mut picked = index::sample(&mut rng, available, n_days).into_vec();
            picked.sort_unstable();
            ScenarioSet {
                set_id: format!("{}-set{:02}", history.site.site_id, i),
                site: history.site.clone(),
                seed: sub,
                k: n_days,
                days: picked.into_iter().map(|d| days[d].clone()).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodePayload {
    Root,
    /// Stage 1: information available when bidding day-ahead.
    DayAhead { da: Vec<f64>, wind: Vec<f64> },
    /// Stage 2: realized real-time conditions.
    RealTime { rt: Vec<f64>, wind_dev: Vec<f64>, reserve: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: usize,
    pub stage: u8,
    pub parent: Option<usize>,
    /// Probability conditional on the parent.
    pub probability: f64,
    /// Day indices (into the history) represented by this node.
    pub members: Vec<usize>,
    pub payload: NodePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub tree_id: String,
    pub site: WindFarmSite,
    pub seed: u64,
    pub branching: (usize, usize),
    pub nodes: Vec<TreeNode>,
}

impl ScenarioTree {
    pub fn children(&self, node: usize) -> impl Iterator<Item = &TreeNode> + '_ {
        self.nodes.iter().filter(move |n| n.parent == Some(node))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> + '_ {
        self.nodes.iter().filter(|n| n.stage == 2)
    }

    pub fn stage1(&self) -> impl Iterator<Item = &TreeNode> + '_ {
        self.nodes.iter().filter(|n| n.stage == 1)
    }

    /// Product of conditional probabilities from the root.
    pub fn absolute_probability(&self, node: usize) -> f64 {
        let mut p = 1.0;
        let mut cur = Some(node);
        let mut guard = 0;
        while let Some(i) = cur {
            let Some(n) = self.nodes.get(i) else { return f64::NAN };
            p *= n.probability;
            cur = n.parent;
            guard += 1;
            if guard > self.nodes.len() {
                return f64::NAN;
            }
        }
        p
    }

    /// Edge list for inspection: `parent,child,stage,probability,absolute_probability,members`.
    pub fn edge_list_csv(&self) -> String {
        let mut out = String::from("parent,child,stage,probability,absolute_probability,members\n");
        for n in &self.nodes {
            let Some(p) = n.parent else { continue };
            let members: Vec<String> = n.members.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(
                out,
                "{p},{},{},{},{},{}",
                n.node_id,
                n.stage,
                fmt_f64(n.probability),
                fmt_f64(self.absolute_probability(n.node_id)),
                members.join(" ")
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { max_iter: 100, tol: 1e-9 }
    }
}

/// Builds a three-stage tree with `branching.0` day-ahead nodes, each with
/// `branching.1` real-time leaves.
pub fn build_scenario_tree(
    history: &SiteHistory,
    curve: &PowerCurve,
    branching: (usize, usize),
    seed: u64,
    config: &KMeansConfig,
) -> Result<ScenarioTree, ScenarioError> {
    let (b1, b2) = branching;
    if b1 == 0 || b2 == 0 {
        return Err(ScenarioError::InvalidParameter(format!("branching ({b1},{b2}) must be positive")));
    }
    let days = history.record.day_profiles(curve);
    let n = days.len();
    if n < b1 * b2 {
        return Err(ScenarioError::InsufficientData { needed: b1 * b2, available: n });
    }

    let stage1_raw: Vec<Vec<f64>> = days.iter().map(|d| [d.da.as_slice(), d.wind.as_slice()].concat()).collect();
    let stage1_std = standardize(&stage1_raw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = kmeans(&stage1_std, b1, &mut rng, config);
    enforce_min_size(&stage1_std, &mut assign, b1, b2);

    let mut nodes = vec![TreeNode {
        node_id: 0,
        stage: 0,
        parent: None,
        probability: 1.0,
        members: (0..n).collect(),
        payload: NodePayload::Root,
    }];
    let mut stage1_members = Vec::with_capacity(b1);
    for c in 0..b1 {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
        let da = mean_rows(members.iter().map(|&i| days[i].da.as_slice()));
        let wind = mean_rows(members.iter().map(|&i| days[i].wind.as_slice()));
        nodes.push(TreeNode {
            node_id: nodes.len(),
            stage: 1,
            parent: Some(0),
            probability: members.len() as f64 / n as f64,
            members: members.clone(),
            payload: NodePayload::DayAhead { da, wind },
        });
        stage1_members.push(members);
    }

    for (c, members) in stage1_members.iter().enumerate() {
        let parent_id = 1 + c;
        let NodePayload::DayAhead { wind: centroid_wind, .. } = &nodes[parent_id].payload else { unreachable!() };
        let centroid_wind = centroid_wind.clone();
        let deviation = |d: &DayProfile| -> Vec<f64> { d.wind.iter().zip(&centroid_wind).map(|(w, c)| w - c).collect() };
        let raw: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| [days[i].rt.as_slice(), deviation(&days[i]).as_slice(), days[i].reserve.as_slice()].concat())
            .collect();
        let sub_assign = kmeans(&standardize(&raw), b2, &mut rng, config);
        for s in 0..b2 {
            let local: Vec<usize> = (0..members.len()).filter(|&j| sub_assign[j] == s).collect();
            let sub_members: Vec<usize> = local.iter().map(|&j| members[j]).collect();
            let rt = mean_rows(sub_members.iter().map(|&i| days[i].rt.as_slice()));
            let devs: Vec<Vec<f64>> = sub_members.iter().map(|&i| deviation(&days[i])).collect();
            let wind_dev = mean_rows(devs.iter().map(Vec::as_slice));
            let reserve = mean_rows(sub_members.iter().map(|&i| days[i].reserve.as_slice()));
            nodes.push(TreeNode {
                node_id: nodes.len(),
                stage: 2,
                parent: Some(parent_id),
                probability: sub_members.len() as f64 / members.len() as f64,
                members: sub_members,
                payload: NodePayload::RealTime { rt, wind_dev, reserve },
            });
        }
    }

    Ok(ScenarioTree {
        tree_id: format!("{}-tree", history.site.site_id),
        site: history.site.clone(),
        seed,
        branching,
        nodes,
    })
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut sum = vec![0.0; HOURS_PER_DAY];
    let mut count = 0usize;
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        count += 1;
    }
    if count > 0 {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    sum
}

/// Per-dimension z-scores; constant dimensions map to 0.
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(dim) = points.first().map(Vec::len) else { return vec![] };
    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for p in points {
        for ((s, v), m) in sd.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(f64::sqrt).collect();
    points
        .iter()
        .map(|p| {
            p.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| if *s > 1e-12 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations with farthest-point initialization. The first center is
/// drawn from `rng`; later centers are the points farthest from all chosen
/// centers, ties going to the lowest index. Empty clusters take the point
/// farthest from its center in the largest cluster. Returns the cluster index
/// of every point; every cluster is non-empty when `points.len() >= k`.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng, config: &KMeansConfig) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let k = k.min(n);
    let first = rng.gen_range(0..n);
    let mut centers: Vec<Vec<f64>> = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let mut best = 0;
        for i in 1..n {
            if min_d[i] > min_d[best] {
                best = i;
            }
        }
        centers.push(points[best].clone());
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(dist2(p, &points[best]));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..config.max_iter.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist2(p, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = dist2(p, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        fill_empty_clusters(points, &mut assign, &centers, k);
        let new_centers = recompute_centers(points, &assign, k);
        let shift = centers.iter().zip(&new_centers).map(|(a, b)| dist2(a, b)).fold(0.0, f64::max);
        centers = new_centers;
        if !changed || shift <= config.tol {
            break;
        }
    }
    assign
}

fn recompute_centers(points: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, c) in sums.iter_mut().zip(&counts) {
        if *c > 0 {
            s.iter_mut().for_each(|v| *v /= *c as f64);
        }
    }
    sums
}

fn fill_empty_clusters(points: &[Vec<f64>], assign: &mut [usize], centers: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut largest = 0;
        for c in 1..k {
            if counts[c] > counts[largest] {
                largest = c;
            }
        }
        if counts[largest] < 2 {
            return;
        }
        let mut pick = None;
        let mut pick_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if assign[i] == largest {
                let d = dist2(p, &centers[largest]);
                if d > pick_d {
                    pick = Some(i);
                    pick_d = d;
                }
            }
        }
        assign[pick.expect("largest cluster is non-empty")] = empty;
    }
}

/// Moves points into clusters holding fewer than `min_size` members,
/// taking from clusters that can spare one the point nearest the needy
/// cluster's center.
fn enforce_min_size(points: &[Vec<f64>], assign: &mut [usize], k: usize, min_size: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(needy) = (0..k).find(|&c| counts[c] < min_size) else { return };
        let centers = recompute_centers(points, assign, k);
        let mut pick = None;
        let mut pick_d = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            if counts[assign[i]] > min_size {
                let d = dist2(p, &centers[needy]);
                if d < pick_d {
                    pick = Some(i);
                    pick_d = d;
                }
            }
        }
        match pick {
            Some(i) => assign[i] = needy,
            None => return,
        }
    }
}

/// Structural audit of a tree.
pub fn validate_tree(tree: &ScenarioTree) -> ValidationReport {
    let mut report = ValidationReport::default();
    let nodes = &tree.nodes;
    let roots: Vec<&TreeNode> = nodes.iter().filter(|n| n.parent.is_none()).collect();
    match roots.len() {
        0 => report.error("tree", "no root node"),
        1 => {
            if roots[0].stage != 0 {
                report.error(format!("node {}", roots[0].node_id), "root must be stage 0");
            }
        }
        k => report.error("tree", format!("{k} root nodes, expected exactly one")),
    }
    for (i, n) in nodes.iter().enumerate() {
        let loc = format!("node {}", n.node_id);
        if n.node_id != i {
            report.error(&loc, format!("node id {} stored at position {i}", n.node_id));
        }
        if let Some(p) = n.parent {
            match nodes.get(p) {
                None => report.error(&loc, format!("orphan: parent {p} does not exist")),
                Some(parent) if parent.stage + 1 != n.stage => {
                    report.error(&loc, format!("stage {} under parent at stage {}", n.stage, parent.stage))
                }
                _ => {}
            }
        }
        if !(n.probability >= 0.0 && n.probability <= 1.0 + PROB_TOL) {
            report.error(&loc, format!("probability {} outside [0, 1]", n.probability));
        }
        let has_children = nodes.iter().any(|c| c.parent == Some(n.node_id));
        if has_children {
            let sum: f64 = tree.children(n.node_id).map(|c| c.probability).sum();
            if (sum - 1.0).abs() > PROB_TOL {
                report.error(&loc, format!("children probabilities sum to {sum}"));
            }
        } else if n.stage != 2 {
            report.error(&loc, format!("leaf at stage {}, expected stage 2", n.stage));
        }
        let lengths_ok = match &n.payload {
            NodePayload::Root => true,
            NodePayload::DayAhead { da, wind } => da.len() == HOURS_PER_DAY && wind.len() == HOURS_PER_DAY,
            NodePayload::RealTime { rt, wind_dev, reserve } => {
                rt.len() == HOURS_PER_DAY && wind_dev.len() == HOURS_PER_DAY && reserve.len() == HOURS_PER_DAY
            }
        };
        if !lengths_ok {
            report.error(&loc, "payload series must have 24 values");
        }
        let kind_ok = matches!(
            (n.stage, &n.payload),
            (0, NodePayload::Root) | (1, NodePayload::DayAhead { .. }) | (2, NodePayload::RealTime { .. })
        );
        if !kind_ok {
            report.error(&loc, format!("payload kind does not match stage {}", n.stage));
        }
    }
    if report.is_ok() {
        let total: f64 = tree.leaves().map(|l| tree.absolute_probability(l.node_id)).sum();
        if (total - 1.0).abs() > PROB_TOL {
            report.error("tree", format!("leaf probabilities sum to {total}"));
        }
    }
    report
}
