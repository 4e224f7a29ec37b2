//! Back-substitution analysis with one linear lower and one linear upper
//! bound per ReLU neuron.

use crate::error::Result;
use crate::relaxation::{minimize_expr, AffineExpr, InputRelaxation};

use super::network::{Network, Op};

/// Linear relaxation of `y = relu(z)` on `[l, u]`: `λ z ≤ y ≤ s z + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluRelax {
    pub lambda: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl ReluRelax {
    pub fn new(l: f64, u: f64) -> Self {
        if u <= 0.0 {
            ReluRelax {
                lambda: 0.0,
                slope: 0.0,
                intercept: 0.0,
            }
        } else if l >= 0.0 {
            ReluRelax {
                lambda: 1.0,
                slope: 1.0,
                intercept: 0.0,
            }
        } else {
            let slope = u / (u - l);
            ReluRelax {
                // Area heuristic; a tie (u = -l) picks the zero slope.
                lambda: if u > -l { 1.0 } else { 0.0 },
                slope,
                intercept: -slope * l,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeepPolyOptions {
    /// Concretize intermediate neurons with the tightening LP as well, not
    /// just the final margins. Only matters when the relaxation has planes.
    pub tighten_every_layer: bool,
}

/// Bounds of every node plus the ReLU relaxations derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// Per node; empty for non-ReLU nodes.
    pub relus: Vec<Vec<ReluRelax>>,
}

impl Analysis {
    /// Rewrites `constant + Σ coeffs · node` into an affine lower bound over
    /// the network inputs.
    pub fn lower_expr(&self, net: &Network, node: usize, coeffs: &[f64], constant: f64) -> AffineExpr {
        let nodes = net.nodes();
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        acc[node] = Some(coeffs.to_vec());
        let mut constant = constant;
        fn slot<'a>(acc: &'a mut [Option<Vec<f64>>], k: usize, len: usize) -> &'a mut Vec<f64> {
            acc[k].get_or_insert_with(|| vec![0.0; len])
        }
        for k in (1..=node).rev() {
            let Some(c) = acc[k].take() else { continue };
            match &nodes[k].op {
                Op::Input => unreachable!("only node 0 is an input"),
                Op::Affine { src, map } => {
                    let dst = slot(&mut acc, *src, nodes[*src].len);
                    for (r, row) in map.rows.iter().enumerate() {
                        if c[r] == 0.0 {
                            continue;
                        }
                        constant += c[r] * map.bias[r];
                        for &(j, w) in row {
                            dst[j] += c[r] * w;
                        }
                    }
                }
                Op::Relu { src } => {
                    let dst = slot(&mut acc, *src, nodes[*src].len);
                    for (r, rel) in self.relus[k].iter().enumerate() {
                        if c[r] >= 0.0 {
                            dst[r] += c[r] * rel.lambda;
                        } else {
                            dst[r] += c[r] * rel.slope;
                            constant += c[r] * rel.intercept;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for s in [*a, *b] {
                        let dst = slot(&mut acc, s, nodes[s].len);
                        for (d, v) in dst.iter_mut().zip(&c) {
                            *d += v;
                        }
                    }
                }
            }
        }
        match &acc[0] {
            Some(c) => AffineExpr::from_dense(c, constant),
            None => AffineExpr {
                coeffs: Vec::new(),
                constant,
            },
        }
    }

    /// Sound lower bound of `constant + Σ coeffs · node` under `relaxation`.
    pub fn lower_bound(
        &self,
        net: &Network,
        relaxation: &InputRelaxation,
        node: usize,
        coeffs: &[f64],
        constant: f64,
        use_lp: bool,
    ) -> Result<f64> {
        let expr = self.lower_expr(net, node, coeffs, constant);
        if use_lp {
            minimize_expr(&expr, relaxation)
        } else {
            Ok(expr.interval_min(&relaxation.lower, &relaxation.upper))
        }
    }
}

#[cfg(feature = "parallel")]
fn collect_indexed<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn collect_indexed<T>(n: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// Runs the analysis layer by layer. Intermediate bounds are intersected
/// with plain interval arithmetic on the bounds computed so far.
pub fn analyze(net: &Network, relaxation: &InputRelaxation, options: DeepPolyOptions) -> Result<Analysis> {
    relaxation.validate()?;
    let nodes = net.nodes();
    if relaxation.len() != net.input_len() {
        return Err(crate::Error::Contract(format!(
            "relaxation covers {} inputs, network expects {}",
            relaxation.len(),
            net.input_len()
        )));
    }
    let use_lp = options.tighten_every_layer && relaxation.spatial.is_some();
    let mut an = Analysis {
        lower: vec![relaxation.lower.clone()],
        upper: vec![relaxation.upper.clone()],
        relus: vec![Vec::new()],
    };
    for (k, node) in nodes.iter().enumerate().skip(1) {
        let (lo, hi, relus) = match &node.op {
            Op::Input => unreachable!("only node 0 is an input"),
            Op::Relu { src } => {
                let (l, u) = (&an.lower[*src], &an.upper[*src]);
                let relus = l.iter().zip(u).map(|(&l, &u)| ReluRelax::new(l, u)).collect();
                (
                    l.iter().map(|v| v.max(0.0)).collect(),
                    u.iter().map(|v| v.max(0.0)).collect(),
                    relus,
                )
            }
            op => {
                let (ilo, ihi) = interval_step(op, &an);
                let bounds = collect_indexed(node.len, |r| {
                    let mut e = vec![0.0; node.len];
                    e[r] = 1.0;
                    let lb = an.lower_bound(net, relaxation, k, &e, 0.0, use_lp)?;
                    e[r] = -1.0;
                    let ub = -an.lower_bound(net, relaxation, k, &e, 0.0, use_lp)?;
                    Ok((lb, ub))
                })?;
                let lo = bounds.iter().zip(&ilo).map(|(b, i)| b.0.max(*i)).collect();
                let hi = bounds.iter().zip(&ihi).map(|(b, i)| b.1.min(*i)).collect();
                (lo, hi, Vec::new())
            }
        };
        an.lower.push(lo);
        an.upper.push(hi);
        an.relus.push(relus);
    }
    Ok(an)
}

fn interval_step(op: &Op, an: &Analysis) -> (Vec<f64>, Vec<f64>) {
    match op {
        Op::Affine { src, map } => {
            let (l, u) = (&an.lower[*src], &an.upper[*src]);
            let mut lo = map.bias.clone();
            let mut hi = map.bias.clone();
            for (r, row) in map.rows.iter().enumerate() {
                for &(j, w) in row {
                    if w >= 0.0 {
                        lo[r] += w * l[j];
                        hi[r] += w * u[j];
                    } else {
                        lo[r] += w * u[j];
                        hi[r] += w * l[j];
                    }
                }
            }
            (lo, hi)
        }
        Op::Add { a, b } => (
            an.lower[*a].iter().zip(&an.lower[*b]).map(|(x, y)| x + y).collect(),
            an.upper[*a].iter().zip(&an.upper[*b]).map(|(x, y)| x + y).collect(),
        ),
        Op::Relu { src } => (
            an.lower[*src].iter().map(|v| v.max(0.0)).collect(),
            an.upper[*src].iter().map(|v| v.max(0.0)).collect(),
        ),
        Op::Input => (an.lower[0].clone(), an.upper[0].clone()),
    }
}

/// Lower bound on `logit[label] − logit[other]`: back-substituted to the
/// inputs and minimized under the full relaxation, never worse than the
/// difference of the output bounds.
pub fn margin(
    net: &Network,
    analysis: &Analysis,
    relaxation: &InputRelaxation,
    label: usize,
    other: usize,
) -> Result<f64> {
    let out = net.output_node();
    let mut c = vec![0.0; net.output_len()];
    c[label] += 1.0;
    c[other] -= 1.0;
    let lp = analysis.lower_bound(net, relaxation, out, &c, 0.0, relaxation.spatial.is_some())?;
    let boxed = analysis.lower[out][label] - analysis.upper[out][other];
    Ok(lp.max(boxed))
}
