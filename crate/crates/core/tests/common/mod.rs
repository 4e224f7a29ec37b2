#![allow(dead_code)]

use std::path::PathBuf;

use deformcert::linsolve::{lp_solve, LinearProgram, Relation, Sense, Status};
use deformcert::relaxation::{add_spatial_rows, InputRelaxation};
use deformcert::verifier::{LayerSpec, NetworkSpec};
use deformcert::Image;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn random_image(rng: &mut ChaCha8Rng, width: usize) -> Image {
    Image::from_fn(width, 1, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
}

/// Dense ReLU net `inputs → hidden… → outputs` with uniform weights scaled by
/// fan-in.
pub fn random_mlp(rng: &mut ChaCha8Rng, inputs: usize, hidden: &[usize], outputs: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut fan_in = inputs;
    for &h in hidden.iter().chain(std::iter::once(&outputs)) {
        let s = (3.0 / fan_in as f64).sqrt();
        let weights = (0..h).map(|_| (0..fan_in).map(|_| rng.gen_range(-s..s)).collect()).collect();
        let bias = (0..h).map(|_| rng.gen_range(-0.2..0.2)).collect();
        layers.push(LayerSpec::Dense { weights, bias });
        layers.push(LayerSpec::Relu);
        fan_in = h;
    }
    layers.pop();
    NetworkSpec {
        input_shape: None,
        layers,
    }
}

/// Dense layers of an MLP `NetworkSpec` as `(weights, bias)`; `None` when it
/// uses anything but alternating dense and ReLU layers.
fn dense_layers(spec: &NetworkSpec) -> Option<Vec<(&Vec<Vec<f64>>, &Vec<f64>)>> {
    let mut out = Vec::new();
    for (k, layer) in spec.layers.iter().enumerate() {
        match (k % 2, layer) {
            (0, LayerSpec::Dense { weights, bias }) => out.push((weights, bias)),
            (1, LayerSpec::Relu) => {}
            _ => return None,
        }
    }
    Some(out)
}

/// Plain interval pre-activation bounds of every hidden layer.
pub fn preactivation_intervals(spec: &NetworkSpec, lower: &[f64], upper: &[f64]) -> Vec<Vec<(f64, f64)>> {
    let layers = dense_layers(spec).expect("MLP spec");
    let mut cur: Vec<(f64, f64)> = lower.iter().copied().zip(upper.iter().copied()).collect();
    let mut out = Vec::new();
    for (w, b) in &layers[..layers.len() - 1] {
        let z: Vec<(f64, f64)> = w
            .iter()
            .zip(b.iter())
            .map(|(row, &bias)| {
                row.iter().zip(&cur).fold((bias, bias), |(lo, hi), (&a, &(l, u))| {
                    if a >= 0.0 {
                        (lo + a * l, hi + a * u)
                    } else {
                        (lo + a * u, hi + a * l)
                    }
                })
            })
            .collect();
        cur = z.iter().map(|&(l, u)| (l.max(0.0), u.max(0.0))).collect();
        out.push(z);
    }
    out
}

pub fn unstable_count(spec: &NetworkSpec, relaxation: &InputRelaxation) -> usize {
    preactivation_intervals(spec, &relaxation.lower, &relaxation.upper)
        .iter()
        .flatten()
        .filter(|&&(l, u)| l < 0.0 && u > 0.0)
        .count()
}

/// Exact minimum of `logit[label] − logit[other]` over the relaxation by
/// enumerating the phase of every unstable ReLU and solving one LP per
/// pattern, with each layer's values as explicit LP variables.
pub fn phase_enumeration_margin(spec: &NetworkSpec, relaxation: &InputRelaxation, label: usize, other: usize) -> f64 {
    let layers = dense_layers(spec).expect("MLP spec");
    let pre = preactivation_intervals(spec, &relaxation.lower, &relaxation.upper);
    let unstable: Vec<(usize, usize)> = pre
        .iter()
        .enumerate()
        .flat_map(|(li, z)| z.iter().enumerate().filter(|(_, b)| b.0 < 0.0 && b.1 > 0.0).map(move |(r, _)| (li, r)))
        .collect();
    assert!(unstable.len() <= 16, "{} unstable ReLUs is too many to enumerate", unstable.len());
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << unstable.len()) {
        let active = |li: usize, r: usize| -> bool {
            let (l, u) = pre[li][r];
            if l >= 0.0 {
                return true;
            }
            if u <= 0.0 {
                return false;
            }
            let bit = unstable.iter().position(|&p| p == (li, r)).unwrap();
            mask >> bit & 1 == 1
        };
        let mut lp = LinearProgram::new(Sense::Minimize);
        let inputs: Vec<usize> = (0..relaxation.len())
            .map(|k| lp.add_var(relaxation.lower[k], relaxation.upper[k], 0.0))
            .collect();
        if let Some(s) = &relaxation.spatial {
            let pairs: Vec<(usize, usize)> = inputs.iter().copied().enumerate().collect();
            add_spatial_rows(&mut lp, &pairs, s);
        }
        let mut cur = inputs;
        for (li, (w, b)) in layers.iter().enumerate() {
            let last = li + 1 == layers.len();
            let mut next = Vec::new();
            for (r, (row, &bias)) in w.iter().zip(b.iter()).enumerate() {
                let z = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
                let mut coeffs = vec![(z, 1.0)];
                coeffs.extend(row.iter().zip(&cur).map(|(&a, &v)| (v, -a)));
                lp.add_constraint(coeffs, Relation::Eq, bias);
                if last {
                    next.push(z);
                } else if active(li, r) {
                    lp.add_constraint(vec![(z, 1.0)], Relation::Ge, 0.0);
                    next.push(z);
                } else {
                    lp.add_constraint(vec![(z, 1.0)], Relation::Le, 0.0);
                    let h = lp.add_var(0.0, 0.0, 0.0);
                    next.push(h);
                }
            }
            cur = next;
        }
        lp.objective[cur[label]] += 1.0;
        lp.objective[cur[other]] -= 1.0;
        let out = lp_solve(&lp).unwrap();
        if out.status == Status::Optimal {
            best = best.min(out.objective);
        }
    }
    best
}
