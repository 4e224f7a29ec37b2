//! Linear and mixed-integer programs: a dense bounded-variable simplex with
//! Bland's rule, and best-first branch and bound over binary variables.

mod milp;
mod simplex;

use std::fmt::Write as _;
use std::time::Duration;

use crate::error::{Error, Result};

pub use milp::milp_solve;
pub use simplex::lp_solve;

/// Feasibility tolerance used for constraint and bound checks.
pub const FEAS_TOL: f64 = 1e-9;
/// Distance from an integer under which a binary counts as integral.
pub const INT_TOL: f64 = 1e-6;
/// Absolute optimality gap at which branch and bound stops.
pub const MILP_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        }
    }
}

/// One sparse row `Σ coeffs[k].1 · x[coeffs[k].0]  (rel)  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    /// Constant added to the objective value.
    pub constant: f64,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram {
            sense,
            objective: Vec::new(),
            constant: 0.0,
            constraints: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    /// Adds a variable with box `[lo, hi]` and objective coefficient `cost`;
    /// returns its index.
    pub fn add_var(&mut self, lo: f64, hi: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lo);
        self.upper.push(hi);
        self.objective.len() - 1
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::Argument("linear program has no variables".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Argument("variable bounds do not match the objective length".into()));
        }
        if !self.constant.is_finite() || self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("non-finite objective coefficient".into()));
        }
        for (k, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Argument(format!("invalid bounds [{lo}, {hi}] on x{k}")));
            }
        }
        for (r, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Argument(format!("row {r} has a non-finite right-hand side")));
            }
            for &(k, a) in &row.coeffs {
                if k >= n || !a.is_finite() {
                    return Err(Error::Argument(format!("row {r} references x{k} with coefficient {a}")));
                }
            }
        }
        Ok(())
    }

    /// Objective value (including the constant) at `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or constraint violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = self.max_violation_rows(x);
        for ((&v, &lo), &hi) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }

    pub(crate) fn max_violation_rows(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.constraints {
            let lhs: f64 = row.coeffs.iter().map(|&(k, a)| a * x[k]).sum();
            let gap = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    /// Plain-text dump, one constraint per line:
    ///
    /// ```text
    /// minimize
    ///   obj: 1 x0 + 2 x1 + 0.5
    /// subject to
    ///   c0: 1 x0 + 1 x1 >= 1
    /// bounds
    ///   0 <= x0 <= 1
    ///   x1 free
    /// end
    /// ```
    pub fn to_lp_text(&self) -> String {
        self.text_with_binaries(&[])
    }

    fn text_with_binaries(&self, binaries: &[usize]) -> String {
        let mut out = String::new();
        let terms = |coeffs: &mut dyn Iterator<Item = (usize, f64)>| -> String {
            let parts: Vec<String> = coeffs.map(|(k, a)| format!("{a} x{k}")).collect();
            if parts.is_empty() {
                "0".into()
            } else {
                parts.join(" + ")
            }
        };
        out.push_str(match self.sense {
            Sense::Minimize => "minimize\n",
            Sense::Maximize => "maximize\n",
        });
        let mut obj = self.objective.iter().copied().enumerate().filter(|(_, c)| *c != 0.0);
        let _ = write!(out, "  obj: {}", terms(&mut obj));
        if self.constant != 0.0 {
            let _ = write!(out, " + {}", self.constant);
        }
        out.push_str("\nsubject to\n");
        for (r, row) in self.constraints.iter().enumerate() {
            let mut it = row.coeffs.iter().copied();
            let _ = writeln!(out, "  c{r}: {} {} {}", terms(&mut it), row.relation.symbol(), row.rhs);
        }
        out.push_str("bounds\n");
        for (k, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            let _ = match (lo.is_finite(), hi.is_finite()) {
                (false, false) => writeln!(out, "  x{k} free"),
                (true, false) => writeln!(out, "  x{k} >= {lo}"),
                (false, true) => writeln!(out, "  x{k} <= {hi}"),
                (true, true) => writeln!(out, "  {lo} <= x{k} <= {hi}"),
            };
        }
        if !binaries.is_empty() {
            out.push_str("binaries\n");
            for &b in binaries {
                let _ = writeln!(out, "  x{b}");
            }
        }
        out.push_str("end\n");
        out
    }
}

/// A linear program some of whose variables must take values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpProgram {
    pub lp: LinearProgram,
    pub binaries: Vec<usize>,
    pub timeout: Option<Duration>,
}

impl MilpProgram {
    pub fn new(lp: LinearProgram) -> Self {
        MilpProgram {
            lp,
            binaries: Vec::new(),
            timeout: None,
        }
    }

    /// Adds a `{0, 1}` variable with objective coefficient `cost`.
    pub fn add_binary(&mut self, cost: f64) -> usize {
        let k = self.lp.add_var(0.0, 1.0, cost);
        self.binaries.push(k);
        k
    }

    pub fn to_lp_text(&self) -> String {
        self.lp.text_with_binaries(&self.binaries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    Timeout,
}

/// Result of [`lp_solve`] or [`milp_solve`].
///
/// For `Optimal`, `objective` is the optimum and `x` an optimal point. For
/// `Timeout`, `bound` is a proven bound on the optimum (a lower bound when
/// minimizing) and `incumbent` the best feasible point found, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: Status,
    pub objective: f64,
    pub x: Vec<f64>,
    pub bound: f64,
    pub incumbent: Option<(f64, Vec<f64>)>,
    /// Simplex pivots (LP) or branch-and-bound nodes (MILP).
    pub work: usize,
}

impl SolveOutcome {
    pub(crate) fn without_point(status: Status, sense: Sense, work: usize) -> Self {
        let objective = match (status, sense) {
            (Status::Infeasible, Sense::Minimize) | (Status::Unbounded, Sense::Maximize) => f64::INFINITY,
            (Status::Infeasible, Sense::Maximize) | (Status::Unbounded, Sense::Minimize) => f64::NEG_INFINITY,
            _ => f64::NAN,
        };
        SolveOutcome {
            status,
            objective,
            x: Vec::new(),
            bound: objective,
            incumbent: None,
            work,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_dump_layout() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x = lp.add_var(0.0, 1.0, 1.0);
        let y = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 2.0);
        lp.constant = 0.5;
        lp.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 1.0);
        let text = lp.to_lp_text();
        assert_eq!(
            text,
            "minimize\n  obj: 1 x0 + 2 x1 + 0.5\nsubject to\n  c0: 1 x0 + 1 x1 >= 1\nbounds\n  0 <= x0 <= 1\n  x1 free\nend\n"
        );
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        assert!(lp.validate().is_err());
        lp.add_var(0.0, 1.0, 1.0);
        lp.add_constraint(vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(lp.validate().is_err());
    }
}
