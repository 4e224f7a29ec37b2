//! Exact mixed-integer encoding of a ReLU network over a relaxation's input
//! set. Unstable ReLUs get a binary and big-M rows built from the
//! back-substitution bounds; affine nodes stay symbolic.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::linsolve::{milp_solve, LinearProgram, MilpProgram, Relation, Sense, Status};
use crate::relaxation::{add_spatial_rows, InputRelaxation, SpatialVars};

use super::deeppoly::Analysis;
use super::network::{Network, Op};

/// `constant + Σ coeff · var` over MILP variables.
#[derive(Debug, Clone, Default, PartialEq)]
struct LinExpr {
    terms: BTreeMap<usize, f64>,
    constant: f64,
}

impl LinExpr {
    fn var(v: usize) -> Self {
        LinExpr {
            terms: BTreeMap::from([(v, 1.0)]),
            constant: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        self.constant += s * other.constant;
        for (&v, &a) in &other.terms {
            *self.terms.entry(v).or_insert(0.0) += s * a;
        }
    }

    fn row(&self) -> Vec<(usize, f64)> {
        self.terms.iter().map(|(&v, &a)| (v, a)).filter(|&(_, a)| a != 0.0).collect()
    }
}

/// The constraint system shared by every label query.
#[derive(Debug, Clone)]
pub struct Encoding {
    program: MilpProgram,
    /// MILP variable of every network input.
    pub input_vars: Vec<usize>,
    pub spatial: Option<SpatialVars>,
    outputs: Vec<LinExpr>,
}

/// Result of one `logit[label] − logit[other]` minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginQuery {
    pub status: Status,
    /// Proven lower bound on the margin (the optimum when `Optimal`).
    pub bound: f64,
    /// Best input found, clipped to its box, with its MILP objective.
    pub witness: Option<(f64, Vec<f64>)>,
    /// Displacement variable values at the witness, by pixel id.
    pub displacement: BTreeMap<usize, [f64; 2]>,
    pub nodes: usize,
}

impl Encoding {
    pub fn new(net: &Network, analysis: &Analysis, relaxation: &InputRelaxation) -> Result<Self> {
        relaxation.validate()?;
        if relaxation.len() != net.input_len() {
            return Err(Error::Contract(format!(
                "relaxation covers {} inputs, network expects {}",
                relaxation.len(),
                net.input_len()
            )));
        }
        let mut program = MilpProgram::new(LinearProgram::new(Sense::Minimize));
        let input_vars: Vec<usize> = (0..relaxation.len())
            .map(|k| program.lp.add_var(relaxation.lower[k], relaxation.upper[k], 0.0))
            .collect();
        let spatial = relaxation.spatial.as_ref().map(|s| {
            let pairs: Vec<(usize, usize)> = input_vars.iter().copied().enumerate().collect();
            add_spatial_rows(&mut program.lp, &pairs, s)
        });

        let mut exprs: Vec<Vec<LinExpr>> = Vec::with_capacity(net.nodes().len());
        for (k, node) in net.nodes().iter().enumerate() {
            let e = match &node.op {
                Op::Input => input_vars.iter().map(|&v| LinExpr::var(v)).collect(),
                Op::Affine { src, map } => map
                    .rows
                    .iter()
                    .zip(&map.bias)
                    .map(|(row, &b)| {
                        let mut e = LinExpr {
                            terms: BTreeMap::new(),
                            constant: b,
                        };
                        for &(j, w) in row {
                            e.add_scaled(&exprs[*src][j], w);
                        }
                        e
                    })
                    .collect(),
                Op::Add { a, b } => exprs[*a]
                    .iter()
                    .zip(&exprs[*b])
                    .map(|(x, y)| {
                        let mut e = x.clone();
                        e.add_scaled(y, 1.0);
                        e
                    })
                    .collect(),
                Op::Relu { src } => (0..node.len)
                    .map(|r| {
                        let (l, u) = (analysis.lower[*src][r], analysis.upper[*src][r]);
                        let z = &exprs[*src][r];
                        if u <= 0.0 {
                            LinExpr::default()
                        } else if l >= 0.0 {
                            z.clone()
                        } else {
                            let y = program.lp.add_var(0.0, u, 0.0);
                            let a = program.add_binary(0.0);
                            let zr = z.row();
                            // y >= z
                            let mut row = vec![(y, 1.0)];
                            row.extend(zr.iter().map(|&(v, c)| (v, -c)));
                            program.lp.add_constraint(row.clone(), Relation::Ge, z.constant);
                            // y <= z - l (1 - a)
                            row.push((a, -l));
                            program.lp.add_constraint(row, Relation::Le, z.constant - l);
                            // y <= u a
                            program.lp.add_constraint(vec![(y, 1.0), (a, -u)], Relation::Le, 0.0);
                            log::trace!("node {k} neuron {r}: unstable on [{l}, {u}]");
                            LinExpr::var(y)
                        }
                    })
                    .collect(),
            };
            exprs.push(e);
        }
        let outputs = exprs.pop().unwrap();
        Ok(Encoding {
            program,
            input_vars,
            spatial,
            outputs,
        })
    }

    pub fn num_binaries(&self) -> usize {
        self.program.binaries.len()
    }

    /// The program minimizing `logit[label] − logit[other]`.
    pub fn margin_program(&self, label: usize, other: usize) -> MilpProgram {
        let mut p = self.program.clone();
        let mut e = self.outputs[label].clone();
        e.add_scaled(&self.outputs[other], -1.0);
        for (v, a) in e.row() {
            p.lp.objective[v] = a;
        }
        p.lp.constant = e.constant;
        p
    }

    pub fn minimize_margin(
        &self,
        relaxation: &InputRelaxation,
        label: usize,
        other: usize,
        timeout: Option<Duration>,
    ) -> Result<MarginQuery> {
        let mut p = self.margin_program(label, other);
        p.timeout = timeout;
        let out = milp_solve(&p)?;
        let point = match out.status {
            Status::Optimal => Some((out.objective, out.x.clone())),
            Status::Timeout => out.incumbent.clone(),
            Status::Infeasible => {
                return Err(Error::Solver("the input relaxation admits no point".into()));
            }
            Status::Unbounded => return Err(Error::Solver("margin program is unbounded".into())),
        };
        let bound = match out.status {
            Status::Optimal => out.objective,
            _ => out.bound,
        };
        let displacement = match (&point, &self.spatial) {
            (Some((_, x)), Some(s)) => s.displacement.iter().map(|(&px, &[vx, vy])| (px, [x[vx], x[vy]])).collect(),
            _ => BTreeMap::new(),
        };
        let witness = point.map(|(v, x)| {
            let input = self
                .input_vars
                .iter()
                .enumerate()
                .map(|(k, &var)| x[var].clamp(relaxation.lower[k], relaxation.upper[k]))
                .collect();
            (v, input)
        });
        Ok(MarginQuery {
            status: out.status,
            bound,
            witness,
            displacement,
            nodes: out.work,
        })
    }
}
