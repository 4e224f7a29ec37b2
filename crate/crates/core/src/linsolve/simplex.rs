//! Two-phase bounded-variable primal simplex on a dense tableau, plus a
//! dual simplex for re-solving after bounds are tightened.
//!
//! Every variable is first shifted or mirrored so that it lives in
//! `[0, ub]` (free variables are split in two). Nonbasic variables rest at
//! either bound, which keeps finite boxes out of the constraint matrix.
//! Entering and leaving choices follow Bland's rule, restricted to pivots
//! that are not negligible next to the other candidates.

use std::time::Instant;

use super::{LinearProgram, Relation, Sense, SolveOutcome, Status, FEAS_TOL};
use crate::error::{Error, Result};

/// Smallest usable pivot, relative to the largest entry (at least 1) of its
/// column in the primal ratio test and of its row in the dual one.
const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const RATIO_TIE: f64 = 1e-12;
/// Smallest pivot accepted among tied ratios, relative to the largest.
const TIE_PIVOT_REL: f64 = 1e-3;
/// Magnitude below which an entry of a freshly rebuilt tableau is taken
/// to be a rounded zero.
const ROUNDOFF: f64 = 1e-11;
/// Infeasibility a row must show before it is trusted without rebuilding
/// the tableau, relative to the row's value.
const STALE_MARGIN: f64 = 1e-6;
/// Iterations between drift checks of the basic solution.
const REINVERT_EVERY: usize = 64;
/// Row residual of the current point above which the tableau is rebuilt.
const DRIFT_TOL: f64 = 1e-10;

/// Solves a linear program to optimality.
pub fn lp_solve(lp: &LinearProgram) -> Result<SolveOutcome> {
    lp.validate()?;
    Ok(solve_bounded(lp, &lp.lower, &lp.upper, None, None)?.0)
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    Shift { col: usize, lo: f64 },
    Mirror { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
}

#[derive(Debug, Clone)]
struct Tableau {
    m: usize,
    n: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    d: Vec<f64>,
    enterable: Vec<bool>,
    pivots: usize,
    /// Original constraint matrix and right-hand side, for reinversion.
    a0: Vec<f64>,
    b0: Vec<f64>,
}

/// Optimal tableau of a solved program, from which a program differing
/// only in variable bounds can be re-solved.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    tab: Tableau,
    maps: Vec<VarMap>,
    cost: Vec<f64>,
}

impl WarmStart {
    /// Number of stored tableau entries.
    pub(crate) fn size(&self) -> usize {
        self.tab.m * self.tab.n
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    Timeout,
}

enum DualEnd {
    Optimal,
    Infeasible,
    Timeout,
    /// No usable pivot; the caller falls back to a cold solve.
    Stalled,
}

const NOT_BASIC: usize = usize::MAX;

impl Tableau {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.n..(i + 1) * self.n]
    }

    fn value(&self, j: usize) -> f64 {
        match self.row_of[j] {
            NOT_BASIC if self.at_upper[j] => self.ub[j],
            NOT_BASIC => self.lb[j],
            r => self.beta[r],
        }
    }

    fn price(&mut self, cost: &[f64]) {
        self.d.copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, &a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let p = self.t[r * n + q];
        {
            let row = &mut self.t[r * n..(r + 1) * n];
            for a in row.iter_mut() {
                *a /= p;
            }
            row[q] = 1.0;
        }
        let (head, tail) = self.t.split_at_mut(r * n);
        let (prow, rest) = tail.split_at_mut(n);
        for row in head.chunks_exact_mut(n).chain(rest.chunks_exact_mut(n)) {
            let f = row[q];
            if f != 0.0 {
                for (a, &b) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
                row[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (a, &b) in self.d.iter_mut().zip(prow.iter()) {
                *a -= f * b;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = NOT_BASIC;
        self.basis[r] = q;
        self.row_of[q] = r;
        self.pivots += 1;
    }

    /// Moves every basic value by `−t[·, q]·step`.
    fn shift_basics(&mut self, q: usize, step: f64) {
        if step == 0.0 {
            return;
        }
        for i in 0..self.m {
            let a = self.t[i * self.n + q];
            if a != 0.0 {
                self.beta[i] -= a * step;
            }
        }
    }

    /// Largest residual `|A·x − b|` of the current point on the original
    /// rows, relative to the row's magnitude.
    fn drift(&self) -> f64 {
        let n = self.n;
        let x: Vec<f64> = (0..n).map(|j| self.value(j)).collect();
        (0..self.m)
            .map(|i| {
                let row = &self.a0[i * n..(i + 1) * n];
                let (mut s, mut mag) = (-self.b0[i], self.b0[i].abs());
                for (&a, &v) in row.iter().zip(&x) {
                    if a != 0.0 {
                        s += a * v;
                        mag += (a * v).abs();
                    }
                }
                s.abs() / (1.0 + mag)
            })
            .fold(0.0, f64::max)
    }

    /// Basic values recomputed from the original data for the current basis
    /// and nonbasic positions.
    fn basic_values(&self, lu: &Lu) -> Vec<f64> {
        let n = self.n;
        let mut rhs = self.b0.clone();
        for j in 0..n {
            if self.row_of[j] == NOT_BASIC {
                let v = self.value(j);
                if v != 0.0 {
                    for (i, r) in rhs.iter_mut().enumerate() {
                        *r -= self.a0[i * n + j] * v;
                    }
                }
            }
        }
        lu.solve(&mut rhs);
        rhs
    }

    fn factor_basis(&self) -> Option<Lu> {
        let n = self.n;
        Lu::factor(self.m, |i, k| self.a0[i * n + self.basis[k]])
    }

    /// Rebuilds `t` and `beta` as `B⁻¹A` and `B⁻¹(b − N·x_N)` from the
    /// original data. Returns false (leaving the tableau alone) when the
    /// basis matrix is numerically singular.
    fn reinvert(&mut self) -> bool {
        let (m, n) = (self.m, self.n);
        let Some(lu) = self.factor_basis() else {
            return false;
        };
        self.beta = self.basic_values(&lu);
        let mut col = vec![0.0; m];
        for j in 0..n {
            if self.row_of[j] != NOT_BASIC {
                for i in 0..m {
                    self.t[i * n + j] = if self.basis[i] == j { 1.0 } else { 0.0 };
                }
                continue;
            }
            for (i, c) in col.iter_mut().enumerate() {
                *c = self.a0[i * n + j];
            }
            lu.solve(&mut col);
            for (i, &c) in col.iter().enumerate() {
                self.t[i * n + j] = c;
            }
        }
        true
    }

    fn run(&mut self, cost: &[f64], deadline: Option<Instant>, limit: usize) -> Result<PhaseEnd> {
        self.price(cost);
        let mut iter = 0usize;
        // Set once the optimum has been confirmed on a rebuilt tableau.
        let mut checked = false;
        loop {
            iter += 1;
            if iter > limit {
                return Err(Error::Solver(format!(
                    "simplex exceeded {limit} iterations on a {}x{} tableau",
                    self.m, self.n
                )));
            }
            if iter % 32 == 0 {
                if let Some(dl) = deadline {
                    if Instant::now() >= dl {
                        return Ok(PhaseEnd::Timeout);
                    }
                }
            }
            if iter % REINVERT_EVERY == 0 && self.drift() > DRIFT_TOL && self.reinvert() {
                self.price(cost);
            }
            let entering = (0..self.n).find(|&j| {
                self.enterable[j]
                    && self.row_of[j] == NOT_BASIC
                    && if self.at_upper[j] { self.d[j] > COST_TOL } else { self.d[j] < -COST_TOL }
            });
            let Some(q) = entering else {
                if !checked && self.drift() > DRIFT_TOL && self.reinvert() {
                    self.price(cost);
                    checked = true;
                    continue;
                }
                return Ok(PhaseEnd::Optimal);
            };
            checked = false;
            let dir = if self.at_upper[q] { -1.0 } else { 1.0 };

            let mut rows = Vec::new();
            let mut best = f64::INFINITY;
            let tol = PIVOT_TOL * (0..self.m).fold(1.0f64, |a, i| a.max(self.t[i * self.n + q].abs()));
            for i in 0..self.m {
                let alpha = self.t[i * self.n + q] * dir;
                let b = self.basis[i];
                let (ratio, to_upper) = if alpha > tol {
                    ((self.beta[i] - self.lb[b]).max(0.0) / alpha, false)
                } else if alpha < -tol && self.ub[b].is_finite() {
                    ((self.beta[i] - self.ub[b]).min(0.0) / alpha, true)
                } else {
                    continue;
                };
                best = best.min(ratio);
                rows.push((i, ratio, alpha.abs(), to_upper));
            }
            // Bland's lowest index among the tied rows, skipping pivots that
            // are tiny next to the largest tied one.
            rows.retain(|&(_, ratio, _, _)| ratio <= best + RATIO_TIE);
            let amax = rows.iter().fold(0.0f64, |a, r| a.max(r.2));
            let leave = rows
                .iter()
                .filter(|r| r.2 >= TIE_PIVOT_REL * amax)
                .min_by_key(|r| self.basis[r.0])
                .map(|&(i, _, _, up)| (i, up));

            let flip = self.ub[q] - self.lb[q];
            if flip.is_finite() && flip <= best {
                self.shift_basics(q, dir * flip);
                self.at_upper[q] = !self.at_upper[q];
                continue;
            }
            let Some((r, to_upper)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            let theta = best;
            self.shift_basics(q, dir * theta);
            let entering_value = if self.at_upper[q] { self.ub[q] - theta } else { self.lb[q] + theta };
            let leaving = self.basis[r];
            self.at_upper[leaving] = to_upper;
            self.at_upper[q] = false;
            self.pivot(r, q);
            self.beta[r] = entering_value;
        }
    }

    /// Bounded dual simplex from a dual-feasible basis: repeatedly drives an
    /// out-of-bounds basic variable to its violated bound.
    fn dual_run(&mut self, cost: &[f64], deadline: Option<Instant>, limit: usize) -> DualEnd {
        let mut fresh = false;
        let bland_after = 10 * self.m;
        for iter in 1..=limit {
            if iter % 32 == 0 && deadline.is_some_and(|dl| Instant::now() >= dl) {
                return DualEnd::Timeout;
            }
            if iter % REINVERT_EVERY == 0 && self.drift() > DRIFT_TOL {
                if !self.reinvert() {
                    return DualEnd::Stalled;
                }
                self.price(cost);
                fresh = true;
            }
            let infeasibility = |i: usize| {
                let b = self.basis[i];
                (self.lb[b] - self.beta[i]).max(self.beta[i] - self.ub[b])
            };
            let candidates = (0..self.m).filter(|&i| infeasibility(i) > FEAS_TOL);
            // Largest violation first; Bland's lowest index once the run is
            // long enough that cycling is a concern.
            let leaving = if iter <= bland_after {
                candidates.max_by(|&a, &b| infeasibility(a).total_cmp(&infeasibility(b)).then(b.cmp(&a)))
            } else {
                candidates.min_by_key(|&i| self.basis[i])
            };
            let Some(r) = leaving else {
                return DualEnd::Optimal;
            };
            let b = self.basis[r];
            let raise = self.beta[r] < self.lb[b];
            let target = if raise { self.lb[b] } else { self.ub[b] };

            let mut cols = Vec::new();
            let mut best = f64::INFINITY;
            let tol = PIVOT_TOL * self.row(r).iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for j in 0..self.n {
                if !self.enterable[j] || self.row_of[j] != NOT_BASIC || self.ub[j] <= self.lb[j] {
                    continue;
                }
                let alpha = self.t[r * self.n + j];
                // Moving x_j off its bound changes x_b by −alpha·Δx_j.
                let usable = match (raise, self.at_upper[j]) {
                    (true, false) | (false, true) => alpha < -tol,
                    (true, true) | (false, false) => alpha > tol,
                };
                if !usable {
                    continue;
                }
                let dj = if self.at_upper[j] { (-self.d[j]).max(0.0) } else { self.d[j].max(0.0) };
                let ratio = dj / alpha.abs();
                best = best.min(ratio);
                cols.push((j, ratio, alpha.abs()));
            }
            cols.retain(|&(_, ratio, _)| ratio <= best + RATIO_TIE);
            let amax = cols.iter().fold(0.0f64, |a, c| a.max(c.2));
            let entering = cols.iter().find(|c| c.2 >= TIE_PIVOT_REL * amax).map(|c| c.0);
            let Some(q) = entering else {
                if self.row_certifies_infeasible(r, if fresh { FEAS_TOL } else { STALE_MARGIN }) {
                    return DualEnd::Infeasible;
                }
                if fresh {
                    return DualEnd::Stalled;
                }
                // Too close to call on a drifted tableau: rebuild and retry.
                if !self.reinvert() {
                    return DualEnd::Stalled;
                }
                self.price(cost);
                fresh = true;
                continue;
            };
            fresh = false;
            let step = (self.beta[r] - target) / self.t[r * self.n + q];
            let entering_value = self.value(q) + step;
            self.shift_basics(q, step);
            self.at_upper[b] = !raise;
            self.at_upper[q] = false;
            self.pivot(r, q);
            self.beta[r] = entering_value;
        }
        DualEnd::Stalled
    }

    /// True when row `r` alone shows that its basic variable cannot reach
    /// its bounds from any point of the nonbasic box.
    fn row_certifies_infeasible(&self, r: usize, margin: f64) -> bool {
        let b = self.basis[r];
        let (mut lo, mut hi) = (self.beta[r], self.beta[r]);
        for j in 0..self.n {
            if self.row_of[j] != NOT_BASIC || !self.enterable[j] {
                continue;
            }
            let alpha = self.t[r * self.n + j];
            if alpha.abs() <= ROUNDOFF {
                continue;
            }
            let v = self.value(j);
            // x_b = beta − alpha·(x_j − v) over x_j ∈ [lb, ub].
            let (d1, d2) = (-alpha * (self.lb[j] - v), -alpha * (self.ub[j] - v));
            lo += d1.min(d2).min(0.0);
            hi += d1.max(d2).max(0.0);
        }
        let margin = margin * (1.0 + self.beta[r].abs());
        hi < self.lb[b] - margin || lo > self.ub[b] + margin
    }
}

/// Solves `lp` with its variable boxes replaced by `lower`/`upper`. Returns
/// `Status::Timeout` (without a point) when `deadline` passes. With `warm`,
/// the solve starts from that optimal tableau of the same program under
/// other bounds and falls back to a cold start if the warm solve stalls.
/// The second value is the final tableau when the outcome is optimal.
pub(crate) fn solve_bounded(
    lp: &LinearProgram,
    lower: &[f64],
    upper: &[f64],
    deadline: Option<Instant>,
    warm: Option<&WarmStart>,
) -> Result<(SolveOutcome, Option<WarmStart>)> {
    for k in 0..lp.num_vars() {
        if lower[k] > upper[k] + FEAS_TOL {
            return Ok((SolveOutcome::without_point(Status::Infeasible, lp.sense, 0), None));
        }
    }
    if let Some(ws) = warm {
        if let Some(done) = solve_warm(lp, lower, upper, deadline, ws) {
            return Ok(done);
        }
        log::trace!("warm start stalled, solving from scratch");
    }
    solve_cold(lp, lower, upper, deadline)
}

fn solve_warm(
    lp: &LinearProgram,
    lower: &[f64],
    upper: &[f64],
    deadline: Option<Instant>,
    ws: &WarmStart,
) -> Option<(SolveOutcome, Option<WarmStart>)> {
    let mut tab = ws.tab.clone();
    tab.pivots = 0;
    for (k, map) in ws.maps.iter().enumerate() {
        let (col, lo, hi) = match *map {
            VarMap::Shift { col, lo } if lower[k].is_finite() => (col, lower[k] - lo, upper[k].max(lower[k]) - lo),
            VarMap::Mirror { col, hi } if upper[k].is_finite() => (col, hi - upper[k], hi - lower[k].min(upper[k])),
            VarMap::Split { .. } if !lower[k].is_finite() && !upper[k].is_finite() => continue,
            _ => return None,
        };
        if lo == tab.lb[col] && hi == tab.ub[col] {
            continue;
        }
        let old = tab.value(col);
        tab.lb[col] = lo;
        tab.ub[col] = hi;
        if tab.row_of[col] != NOT_BASIC {
            continue;
        }
        // Keep the nonbasic column on the bound its reduced cost prefers.
        let d = tab.d[col];
        if d < -COST_TOL {
            if !hi.is_finite() {
                return None;
            }
            tab.at_upper[col] = true;
        } else if d > COST_TOL || !hi.is_finite() {
            tab.at_upper[col] = false;
        }
        let new = tab.value(col);
        tab.shift_basics(col, new - old);
    }

    let limit = 50_000 + 100 * (tab.m + tab.n);
    match tab.dual_run(&ws.cost, deadline, limit) {
        DualEnd::Optimal => {}
        DualEnd::Infeasible => return Some((SolveOutcome::without_point(Status::Infeasible, lp.sense, tab.pivots), None)),
        DualEnd::Timeout => return Some((SolveOutcome::without_point(Status::Timeout, lp.sense, tab.pivots), None)),
        DualEnd::Stalled => return None,
    }
    match tab.run(&ws.cost, deadline, limit) {
        Ok(PhaseEnd::Optimal) => {}
        Ok(PhaseEnd::Timeout) => {
            return Some((SolveOutcome::without_point(Status::Timeout, lp.sense, tab.pivots), None));
        }
        Ok(PhaseEnd::Unbounded) | Err(_) => return None,
    }
    finish(lp, lower, upper, tab, ws.maps.clone(), ws.cost.clone()).ok()
}

fn solve_cold(
    lp: &LinearProgram,
    lower: &[f64],
    upper: &[f64],
    deadline: Option<Instant>,
) -> Result<(SolveOutcome, Option<WarmStart>)> {
    let nv = lp.num_vars();
    let timeout = |pivots| Ok((SolveOutcome::without_point(Status::Timeout, lp.sense, pivots), None));

    // Variable transforms into [0, ub] columns.
    let mut maps = Vec::with_capacity(nv);
    let mut col_ub = Vec::new();
    let mut col_cost = Vec::new();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    for k in 0..nv {
        let (lo, hi) = (lower[k], upper[k].max(lower[k]));
        let c = sign * lp.objective[k];
        let map = if lo.is_finite() {
            col_ub.push(hi - lo);
            col_cost.push(c);
            VarMap::Shift { col: col_ub.len() - 1, lo }
        } else if hi.is_finite() {
            col_ub.push(f64::INFINITY);
            col_cost.push(-c);
            VarMap::Mirror { col: col_ub.len() - 1, hi }
        } else {
            col_ub.push(f64::INFINITY);
            col_cost.push(c);
            col_ub.push(f64::INFINITY);
            col_cost.push(-c);
            VarMap::Split { pos: col_ub.len() - 2, neg: col_ub.len() - 1 }
        };
        maps.push(map);
    }
    let n_struct = col_ub.len();

    // Rows in transformed space; empty rows are checked and dropped.
    struct Row {
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    }
    let mut rows = Vec::with_capacity(lp.constraints.len());
    for con in &lp.constraints {
        let mut coeffs = Vec::with_capacity(con.coeffs.len() + 1);
        let mut rhs = con.rhs;
        for &(k, a) in &con.coeffs {
            if a == 0.0 {
                continue;
            }
            match maps[k] {
                VarMap::Shift { col, lo } => {
                    coeffs.push((col, a));
                    rhs -= a * lo;
                }
                VarMap::Mirror { col, hi } => {
                    coeffs.push((col, -a));
                    rhs -= a * hi;
                }
                VarMap::Split { pos, neg } => {
                    coeffs.push((pos, a));
                    coeffs.push((neg, -a));
                }
            }
        }
        if coeffs.is_empty() {
            let ok = match con.relation {
                Relation::Le => rhs >= -FEAS_TOL,
                Relation::Ge => rhs <= FEAS_TOL,
                Relation::Eq => rhs.abs() <= FEAS_TOL,
            };
            if !ok {
                return Ok((SolveOutcome::without_point(Status::Infeasible, lp.sense, 0), None));
            }
            continue;
        }
        rows.push(Row {
            coeffs,
            relation: con.relation,
            rhs,
        });
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.relation != Relation::Eq).count();
    // Row orientation (rhs ≥ 0) decides whether the slack can start basic.
    let mut flips = Vec::with_capacity(m);
    let mut needs_art = Vec::with_capacity(m);
    for row in &rows {
        let flip = row.rhs < 0.0;
        let slack_sign = match row.relation {
            Relation::Le => 1.0,
            Relation::Ge => -1.0,
            Relation::Eq => 0.0,
        } * if flip { -1.0 } else { 1.0 };
        flips.push(flip);
        needs_art.push(slack_sign <= 0.0);
    }
    let n_art = needs_art.iter().filter(|&&a| a).count();
    let n = n_struct + n_slack + n_art;

    let mut t = vec![0.0; m * n];
    let mut beta = vec![0.0; m];
    let mut basis = vec![0; m];
    let mut ub = col_ub;
    ub.resize(n, f64::INFINITY);
    let mut slack_col = n_struct;
    let mut art_col = n_struct + n_slack;
    for (i, row) in rows.iter().enumerate() {
        let s = if flips[i] { -1.0 } else { 1.0 };
        let cells = &mut t[i * n..(i + 1) * n];
        for &(c, a) in &row.coeffs {
            cells[c] += s * a;
        }
        beta[i] = s * row.rhs;
        if row.relation != Relation::Eq {
            let coef = if row.relation == Relation::Le { 1.0 } else { -1.0 };
            cells[slack_col] = s * coef;
            if !needs_art[i] {
                basis[i] = slack_col;
            }
            slack_col += 1;
        }
        if needs_art[i] {
            cells[art_col] = 1.0;
            basis[i] = art_col;
            art_col += 1;
        }
    }

    let mut row_of = vec![NOT_BASIC; n];
    for (i, &b) in basis.iter().enumerate() {
        row_of[b] = i;
    }
    let mut tab = Tableau {
        m,
        n,
        a0: t.clone(),
        b0: beta.clone(),
        t,
        beta,
        basis,
        row_of,
        at_upper: vec![false; n],
        lb: vec![0.0; n],
        ub,
        d: vec![0.0; n],
        enterable: vec![true; n],
        pivots: 0,
    };
    let limit = 50_000 + 100 * (m + n);
    let art_start = n_struct + n_slack;

    if n_art > 0 {
        let mut cost1 = vec![0.0; n];
        for c in cost1.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        match tab.run(&cost1, deadline, limit)? {
            PhaseEnd::Timeout => return timeout(tab.pivots),
            PhaseEnd::Unbounded => return Err(Error::Solver("phase one reported an unbounded ray".into())),
            PhaseEnd::Optimal => {}
        }
        let infeas: f64 = (art_start..n).map(|j| tab.value(j)).sum();
        let scale = 1.0 + tab.b0.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if infeas > FEAS_TOL * scale {
            return Ok((SolveOutcome::without_point(Status::Infeasible, lp.sense, tab.pivots), None));
        }
        // Drive zero-valued artificials out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] < art_start {
                continue;
            }
            let candidate = (0..art_start)
                .filter(|&j| tab.row_of[j] == NOT_BASIC)
                .max_by(|&a, &b| tab.row(r)[a].abs().total_cmp(&tab.row(r)[b].abs()));
            if let Some(q) = candidate.filter(|&q| tab.row(r)[q].abs() > PIVOT_TOL) {
                let value = tab.value(q);
                let leaving = tab.basis[r];
                tab.at_upper[leaving] = false;
                tab.at_upper[q] = false;
                tab.pivot(r, q);
                tab.beta[r] = value;
            }
        }
        for j in art_start..n {
            tab.enterable[j] = false;
            tab.ub[j] = 0.0;
        }
    }

    let mut cost2 = vec![0.0; n];
    cost2[..n_struct].copy_from_slice(&col_cost);
    match tab.run(&cost2, deadline, limit)? {
        PhaseEnd::Timeout => return timeout(tab.pivots),
        PhaseEnd::Unbounded => {
            return Ok((SolveOutcome::without_point(Status::Unbounded, lp.sense, tab.pivots), None));
        }
        PhaseEnd::Optimal => {}
    }
    finish(lp, lower, upper, tab, maps, cost2)
}

/// Reads the optimal point off the tableau, re-solving the basic values
/// from the original data when the tableau has drifted.
fn finish(
    lp: &LinearProgram,
    lower: &[f64],
    upper: &[f64],
    tab: Tableau,
    maps: Vec<VarMap>,
    cost: Vec<f64>,
) -> Result<(SolveOutcome, Option<WarmStart>)> {
    let recover = |cols: &[f64]| -> Vec<f64> {
        maps.iter()
            .map(|map| match *map {
                VarMap::Shift { col, lo } => lo + cols[col],
                VarMap::Mirror { col, hi } => hi - cols[col],
                VarMap::Split { pos, neg } => cols[pos] - cols[neg],
            })
            .collect()
    };
    let cols: Vec<f64> = (0..tab.n).map(|j| tab.value(j)).collect();
    let mut x = recover(&cols);
    let scale = 1.0
        + x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        + lp.constraints.iter().fold(0.0f64, |a, c| a.max(c.rhs.abs()));
    let mut violation = bounded_violation(lp, lower, upper, &x);
    if violation > FEAS_TOL * scale {
        if let Some(lu) = tab.factor_basis() {
            let mut refined = cols.clone();
            for (&bj, v) in tab.basis.iter().zip(tab.basic_values(&lu)) {
                refined[bj] = v;
            }
            let xr = recover(&refined);
            let vr = bounded_violation(lp, lower, upper, &xr);
            if vr < violation {
                x = xr;
                violation = vr;
            }
        }
    }
    if violation > 1e-6 * scale {
        return Err(Error::Solver(format!(
            "simplex solution violates the program by {violation:e} after {} pivots",
            tab.pivots
        )));
    }
    let objective = lp.evaluate(&x);
    let outcome = SolveOutcome {
        status: Status::Optimal,
        objective,
        x,
        bound: objective,
        incumbent: None,
        work: tab.pivots,
    };
    Ok((outcome, Some(WarmStart { tab, maps, cost })))
}

fn bounded_violation(lp: &LinearProgram, lower: &[f64], upper: &[f64], x: &[f64]) -> f64 {
    let mut worst = lp.max_violation_rows(x);
    for ((&v, &lo), &hi) in x.iter().zip(lower).zip(upper) {
        worst = worst.max(lo - v).max(v - hi);
    }
    worst
}

/// Dense LU factorization with partial pivoting.
struct Lu {
    m: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(m: usize, entry: impl Fn(usize, usize) -> f64) -> Option<Lu> {
        let mut lu: Vec<f64> = (0..m * m).map(|x| entry(x / m, x % m)).collect();
        let mut perm: Vec<usize> = (0..m).collect();
        for col in 0..m {
            let piv = (col..m).max_by(|&p, &q| lu[p * m + col].abs().total_cmp(&lu[q * m + col].abs()))?;
            if lu[piv * m + col].abs() < 1e-12 {
                return None;
            }
            if piv != col {
                for k in 0..m {
                    lu.swap(piv * m + k, col * m + k);
                }
                perm.swap(piv, col);
            }
            let p = lu[col * m + col];
            for r in col + 1..m {
                let f = lu[r * m + col] / p;
                lu[r * m + col] = f;
                if f != 0.0 {
                    for k in col + 1..m {
                        lu[r * m + k] -= f * lu[col * m + k];
                    }
                }
            }
        }
        Some(Lu { m, lu, perm })
    }

    /// Overwrites `x` (holding `b`) with the solution of `Bx = b`.
    fn solve(&self, x: &mut [f64]) {
        let m = self.m;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| x[p]).collect();
        for r in 0..m {
            let s: f64 = (0..r).map(|k| self.lu[r * m + k] * y[k]).sum();
            y[r] -= s;
        }
        for r in (0..m).rev() {
            let s: f64 = (r + 1..m).map(|k| self.lu[r * m + k] * y[k]).sum();
            y[r] = (y[r] - s) / self.lu[r * m + r];
        }
        x.copy_from_slice(&y);
    }
}
