//! Best-first branch and bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{solve_bounded, WarmStart};
use super::{MilpProgram, Sense, SolveOutcome, Status, INT_TOL, MILP_GAP};
use crate::error::{Error, Result};

struct Node {
    /// LP bound in minimization orientation.
    key: f64,
    id: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    /// Optimal tableau of this node's relaxation, for its children.
    warm: Option<WarmStart>,
}

/// Tableau entries that open nodes may hold for warm starts in total.
const WARM_BUDGET: usize = 1 << 25;

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Reversed so the max-heap pops the smallest bound, then the oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves a MILP by best-first branch and bound, branching on the most
/// fractional binary (lowest index on ties). Stops at the absolute gap
/// [`MILP_GAP`] or at the program's timeout, in which case the outcome
/// carries the proven bound and the incumbent.
pub fn milp_solve(program: &MilpProgram) -> Result<SolveOutcome> {
    let lp = &program.lp;
    lp.validate()?;
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    for &b in &program.binaries {
        if b >= lp.num_vars() {
            return Err(Error::Argument(format!("binary index {b} out of range")));
        }
        lower[b] = lower[b].max(0.0);
        upper[b] = upper[b].min(1.0);
    }
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let deadline = program.timeout.map(|t| Instant::now() + t);
    let timed_out = || deadline.is_some_and(|d| Instant::now() >= d);

    let (root, root_warm) = solve_bounded(lp, &lower, &upper, deadline, None)?;
    match root.status {
        Status::Optimal => {}
        Status::Timeout => {
            let mut out = SolveOutcome::without_point(Status::Timeout, lp.sense, 1);
            out.bound = -sign * f64::INFINITY;
            return Ok(out);
        }
        other => return Ok(SolveOutcome::without_point(other, lp.sense, 1)),
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut stored = root_warm.as_ref().map_or(0, WarmStart::size);
    heap.push(Node {
        key: sign * root.objective,
        id: next_id,
        lower,
        upper,
        x: root.x,
        warm: root_warm,
    });
    next_id += 1;
    let mut nodes = 1usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let inc_key = |inc: &Option<(f64, Vec<f64>)>| inc.as_ref().map_or(f64::INFINITY, |(v, _)| sign * v);

    let timeout_outcome = |bound_key: f64, incumbent: Option<(f64, Vec<f64>)>, nodes: usize| {
        let bound = sign * bound_key.min(inc_key(&incumbent));
        SolveOutcome {
            status: Status::Timeout,
            objective: incumbent.as_ref().map_or(f64::NAN, |(v, _)| *v),
            x: incumbent.as_ref().map_or_else(Vec::new, |(_, x)| x.clone()),
            bound,
            incumbent,
            work: nodes,
        }
    };

    while let Some(node) = heap.pop() {
        stored -= node.warm.as_ref().map_or(0, WarmStart::size);
        if node.key >= inc_key(&incumbent) - MILP_GAP {
            break;
        }
        if timed_out() {
            return Ok(timeout_outcome(node.key, incumbent, nodes));
        }
        let branch = program
            .binaries
            .iter()
            .copied()
            .map(|b| (b, (node.x[b] - node.x[b].round()).abs()))
            .filter(|&(_, frac)| frac > INT_TOL)
            .fold(None::<(usize, f64)>, |best, (b, frac)| match best {
                Some((bb, bf)) if bf > frac || (bf == frac && bb < b) => Some((bb, bf)),
                _ => Some((b, frac)),
            });

        let Some((var, _)) = branch else {
            // Integral relaxation: re-solve with the binaries pinned so the
            // leaf value is exact rather than within the integrality gap.
            let (mut lo, mut hi) = (node.lower.clone(), node.upper.clone());
            for &b in &program.binaries {
                let v = node.x[b].round().clamp(0.0, 1.0);
                lo[b] = v;
                hi[b] = v;
            }
            let (leaf, _) = solve_bounded(lp, &lo, &hi, deadline, node.warm.as_ref())?;
            nodes += 1;
            let (value, x) = match leaf.status {
                Status::Optimal => (leaf.objective, leaf.x),
                Status::Timeout => return Ok(timeout_outcome(node.key, incumbent, nodes)),
                _ => {
                    log::debug!("leaf {} lost feasibility when binaries were pinned", node.id);
                    let mut x = node.x.clone();
                    for &b in &program.binaries {
                        x[b] = x[b].round();
                    }
                    (lp.evaluate(&x), x)
                }
            };
            if sign * value < inc_key(&incumbent) {
                incumbent = Some((value, x));
            }
            continue;
        };

        for fixed in [0.0, 1.0] {
            let (mut lo, mut hi) = (node.lower.clone(), node.upper.clone());
            lo[var] = fixed;
            hi[var] = fixed;
            let (child, mut warm) = solve_bounded(lp, &lo, &hi, deadline, node.warm.as_ref())?;
            nodes += 1;
            match child.status {
                Status::Optimal => {
                    let key = sign * child.objective;
                    if key < inc_key(&incumbent) - MILP_GAP {
                        let size = warm.as_ref().map_or(0, WarmStart::size);
                        if stored + size > WARM_BUDGET {
                            warm = None;
                        } else {
                            stored += size;
                        }
                        heap.push(Node {
                            key: key.max(node.key),
                            id: next_id,
                            lower: lo,
                            upper: hi,
                            x: child.x,
                            warm,
                        });
                        next_id += 1;
                    }
                }
                Status::Timeout => {
                    let open = heap.iter().map(|n| n.key).fold(node.key, f64::min);
                    return Ok(timeout_outcome(open, incumbent, nodes));
                }
                Status::Infeasible => {}
                Status::Unbounded => {
                    return Err(Error::Solver("unbounded relaxation below a bounded root".into()));
                }
            }
        }
    }

    match incumbent {
        Some((value, x)) => Ok(SolveOutcome {
            status: Status::Optimal,
            objective: value,
            x,
            bound: value,
            incumbent: None,
            work: nodes,
        }),
        None => Ok(SolveOutcome::without_point(Status::Infeasible, lp.sense, nodes)),
    }
}
