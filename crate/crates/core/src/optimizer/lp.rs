//! Linear programs in bounded-variable form and their solution.
//!
//! The pivoting itself is done by `minilp` (sparse revised simplex with
//! bounded variables); this module owns the model container, status mapping
//! and a post-solve feasibility check so callers never trust the backend
//! blindly.

use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize c·x` subject to bounds and rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    pub names: Vec<String>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, objective: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(objective);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: &[(usize, f64)], relation: Relation, rhs: f64) {
        self.rows.push(Row { coeffs: coeffs.to_vec(), relation, rhs });
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Structural invariants: bounds ordered, rows reference declared vars.
    pub fn check(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.names.len() != n {
            return Err("inconsistent variable vectors".into());
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(format!("variable {} has bounds [{l}, {u}]", self.names[i]));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(format!("row {r} has non-finite rhs"));
            }
            if let Some((j, _)) = row.coeffs.iter().find(|(j, a)| *j >= n || !a.is_finite()) {
                return Err(format!("row {r} references invalid variable {j}"));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err("non-finite objective coefficient".into());
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest scaled violation of bounds and rows at `x`.
    pub fn max_violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for (j, v) in x.iter().enumerate() {
            let scale = 1.0 + v.abs();
            let viol = ((self.lower[j] - v).max(v - self.upper[j])).max(0.0) / scale;
            if viol > worst.0 {
                worst = (viol, format!("bound of {}", self.names[j]));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            let mut lhs = 0.0;
            let mut mag = row.rhs.abs();
            for &(j, a) in &row.coeffs {
                lhs += a * x[j];
                mag = mag.max((a * x[j]).abs());
            }
            let diff = lhs - row.rhs;
            let viol = match row.relation {
                Relation::Le => diff.max(0.0),
                Relation::Ge => (-diff).max(0.0),
                Relation::Eq => diff.abs(),
            } / (1.0 + mag);
            if viol > worst.0 {
                worst = (viol, format!("row {r}"));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    /// Simplex pivots, when the backend reports them.
    pub iterations: Option<u64>,
    pub solve_ms: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub const DEFAULT_TOL: f64 = 1e-7;

pub fn solve_lp(model: &LinearProgram, tol: f64) -> Result<LpSolution, SolveError> {
    model.check().map_err(SolveError::InvalidModel)?;
    let started = Instant::now();
    let n = model.num_vars();
    let not_optimal = |status| LpSolution {
        x: vec![0.0; n],
        objective: 0.0,
        status,
        iterations: None,
        solve_ms: started.elapsed().as_secs_f64() * 1e3,
    };

    let mut problem = minilp::Problem::new(minilp::OptimizationDirection::Maximize);
    let vars: Vec<minilp::Variable> = (0..n)
        .map(|j| problem.add_var(model.objective[j], (model.lower[j], model.upper[j])))
        .collect();
    for row in &model.rows {
        let expr: Vec<(minilp::Variable, f64)> = row.coeffs.iter().map(|&(j, a)| (vars[j], a)).collect();
        let op = match row.relation {
            Relation::Le => minilp::ComparisonOp::Le,
            Relation::Eq => minilp::ComparisonOp::Eq,
            Relation::Ge => minilp::ComparisonOp::Ge,
        };
        problem.add_constraint(expr.as_slice(), op, row.rhs);
    }

    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| problem.solve()))
        .map_err(|_| SolveError::NumericalFailure("solver backend panicked".into()))?;
    let solution = match outcome {
        Ok(s) => s,
        Err(minilp::Error::Infeasible) => return Ok(not_optimal(LpStatus::Infeasible)),
        Err(minilp::Error::Unbounded) => return Ok(not_optimal(LpStatus::Unbounded)),
    };
    // minilp may report some unbounded rays as Ok with infinite values
    if vars.iter().any(|v| !solution[*v].is_finite()) || !solution.objective().is_finite() {
        return Ok(not_optimal(LpStatus::Unbounded));
    }
    let x: Vec<f64> = vars
        .iter()
        .enumerate()
        .map(|(j, v)| solution[*v].clamp(model.lower[j], model.upper[j]))
        .collect();
    let (viol, at) = model.max_violation(&x);
    if viol > tol {
        return Err(SolveError::NumericalFailure(format!("solution violates {at} by {viol:e} (scaled)")));
    }
    Ok(LpSolution {
        objective: model.objective_value(&x),
        x,
        status: LpStatus::Optimal,
        iterations: None,
        solve_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bounded_variable() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 1.0, 0.0, 10.0);
        lp.add_row(&[(x, 1.0)], Relation::Le, 5.0);
        let s = solve_lp(&lp, DEFAULT_TOL).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[x] - 5.0).abs() < 1e-9);
        assert!((s.objective - 5.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_is_a_status() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 1.0, 0.0, f64::INFINITY);
        lp.add_row(&[(x, 1.0)], Relation::Le, -1.0);
        assert_eq!(solve_lp(&lp, DEFAULT_TOL).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_a_status() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 1.0, 0.0, f64::INFINITY);
        let y = lp.add_var("y", 0.0, 0.0, f64::INFINITY);
        lp.add_row(&[(x, 1.0), (y, -1.0)], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp, DEFAULT_TOL).unwrap().status, LpStatus::Unbounded);
    }

    /// max 2x + 3y, x + y <= 4, x,y in [0,3]. Candidate vertices of the
    /// feasible polygon: (0,0) (3,0) (3,1) (1,3) (0,3).
    #[test]
    fn two_variable_vertex() {
        let vertices = [(0.0, 0.0), (3.0, 0.0), (3.0, 1.0), (1.0, 3.0), (0.0, 3.0)];
        let (bx, by) = vertices
            .iter()
            .copied()
            .max_by(|a, b| (2.0 * a.0 + 3.0 * a.1).partial_cmp(&(2.0 * b.0 + 3.0 * b.1)).unwrap())
            .unwrap();
        assert_eq!((bx, by), (1.0, 3.0));

        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 2.0, 0.0, 3.0);
        let y = lp.add_var("y", 3.0, 0.0, 3.0);
        lp.add_row(&[(x, 1.0), (y, 1.0)], Relation::Le, 4.0);
        let s = solve_lp(&lp, DEFAULT_TOL).unwrap();
        assert!((s.x[x] - bx).abs() < 1e-7 && (s.x[y] - by).abs() < 1e-7);
        assert!((s.objective - 11.0).abs() < 1e-7);
    }

    #[test]
    fn crossed_bounds_rejected() {
        let mut lp = LinearProgram::new();
        lp.add_var("x", 1.0, 2.0, 1.0);
        assert!(matches!(solve_lp(&lp, DEFAULT_TOL), Err(SolveError::InvalidModel(_))));
    }

    #[test]
    fn bad_row_index_rejected() {
        let mut lp = LinearProgram::new();
        lp.add_var("x", 1.0, 0.0, 1.0);
        lp.add_row(&[(3, 1.0)], Relation::Le, 1.0);
        assert!(lp.check().is_err());
    }
}
