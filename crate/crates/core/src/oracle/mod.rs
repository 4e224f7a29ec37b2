//! Random admissible vector fields, a sampling attack, and empirical coverage
//! of the interval bounds.
//!
//! Sample `k` of a run with seed `s` draws from `ChaCha8Rng::seed_from_u64(s)`
//! switched to stream `k` (`set_stream(k)`), so every sample is reproducible
//! on its own and results do not depend on scheduling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounds_map, AttackBudget, Norm, PixelBounds};
use crate::imaging::{Image, VectorField};
use crate::verifier::{argmax, network_input, Network};

/// Slack allowed on the flow constraint by [`is_admissible`].
pub const FLOW_TOL: f64 = 1e-9;
/// Rounding allowance when checking sampled values against interval bounds.
pub const CONTAINMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub budget: AttackBudget,
    pub samples: usize,
    pub seed: u64,
    /// Flow projection sweeps before falling back to shrinking the field.
    pub projection_cap: usize,
}

impl SamplerConfig {
    pub fn new(budget: AttackBudget, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Argument("sample count must be at least 1".into()));
        }
        Ok(SamplerConfig {
            budget,
            samples,
            seed,
            projection_cap: 200,
        })
    }
}

/// Generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Whether `field` is within the budget: `‖τ‖_{T_p} ≤ δ`, flow at most
/// `γ + FLOW_TOL`, and every displaced pixel inside the image.
pub fn is_admissible(field: &VectorField, budget: &AttackBudget) -> bool {
    field.vectors().iter().all(|d| budget.norm.length(*d) <= budget.delta)
        && (budget.gamma.is_infinite() || field.flow() <= budget.gamma + FLOW_TOL)
        && field.stays_in_image()
}

fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, norm: Norm, delta: f64) -> [f64; 2] {
    if delta == 0.0 {
        return [0.0, 0.0];
    }
    match norm {
        Norm::Linf => [rng.gen_range(-delta..=delta), rng.gen_range(-delta..=delta)],
        Norm::L2 => {
            let r = delta * rng.gen::<f64>().sqrt();
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            [r * t.cos(), r * t.sin()]
        }
        Norm::L1 => loop {
            let d = [rng.gen_range(-delta..=delta), rng.gen_range(-delta..=delta)];
            if d[0].abs() + d[1].abs() <= delta {
                break d;
            }
        },
    }
}

fn into_ball(mut d: [f64; 2], norm: Norm, delta: f64) -> [f64; 2] {
    let mut len = norm.length(d);
    while len > delta {
        let s = if delta == 0.0 { 0.0 } else { delta / len * (1.0 - f64::EPSILON) };
        d = [d[0] * s, d[1] * s];
        len = norm.length(d);
    }
    d
}

/// Random admissible field: independent draws per pixel, then alternating
/// flow projection (each violating edge closes half its excess from either
/// side) and clipping to the ball and the image. If the sweeps do not
/// converge the field is halved until it is admissible, ending at zero.
pub fn sample_field<R: Rng + ?Sized>(width: usize, budget: &AttackBudget, projection_cap: usize, rng: &mut R) -> VectorField {
    let (norm, delta, gamma) = (budget.norm, budget.delta, budget.gamma);
    if gamma == 0.0 {
        // A constant field that keeps every pixel inside the image is zero.
        return VectorField::zeros(width);
    }
    let hi = width as f64;
    let mut d: Vec<[f64; 2]> = (0..width * width).map(|_| uniform_in_ball(rng, norm, delta)).collect();
    let clip = |d: &mut Vec<[f64; 2]>| {
        for (k, v) in d.iter_mut().enumerate() {
            let (i, j) = ((k / width + 1) as f64, (k % width + 1) as f64);
            *v = into_ball(*v, norm, delta);
            v[0] = (i + v[0]).clamp(1.0, hi) - i;
            v[1] = (j + v[1]).clamp(1.0, hi) - j;
        }
    };
    clip(&mut d);
    if gamma.is_finite() {
        let edges: Vec<(usize, usize)> = (0..width * width)
            .flat_map(|k| {
                let right = (k % width + 1 < width).then_some((k, k + 1));
                let down = (k / width + 1 < width).then_some((k, k + width));
                right.into_iter().chain(down)
            })
            .collect();
        let flow = |d: &[[f64; 2]]| {
            edges
                .iter()
                .map(|&(a, b)| (d[a][0] - d[b][0]).abs().max((d[a][1] - d[b][1]).abs()))
                .fold(0.0, f64::max)
        };
        let mut iter = 0;
        while flow(&d) > gamma + FLOW_TOL && iter < projection_cap {
            for &(a, b) in &edges {
                for c in 0..2 {
                    let diff = d[a][c] - d[b][c];
                    let excess = diff.abs() - gamma;
                    if excess > 0.0 {
                        let step = 0.5 * excess * diff.signum();
                        d[a][c] -= step;
                        d[b][c] += step;
                    }
                }
            }
            clip(&mut d);
            iter += 1;
        }
    }
    let mut field = VectorField::from_vec(width, d).expect("finite displacements");
    let mut scale = 1.0;
    while !is_admissible(&field, budget) {
        scale *= 0.5;
        if scale < 1e-12 {
            return VectorField::zeros(width);
        }
        let v = field.vectors().iter().map(|d| [d[0] * 0.5, d[1] * 0.5]).collect();
        field = VectorField::from_vec(width, v).expect("finite displacements");
    }
    field
}

/// Sample `index` of the run described by `config`.
pub fn sample_indexed(width: usize, config: &SamplerConfig, index: u64) -> VectorField {
    sample_field(width, &config.budget, config.projection_cap, &mut sample_rng(config.seed, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackHit {
    pub index: u64,
    pub field: VectorField,
    pub label: usize,
}

#[cfg(feature = "parallel")]
fn first_hit(n: u64, f: impl Fn(u64) -> Option<AttackHit> + Sync + Send) -> Option<AttackHit> {
    use rayon::prelude::*;
    (0..n).into_par_iter().find_map_first(f)
}

#[cfg(not(feature = "parallel"))]
fn first_hit(n: u64, f: impl Fn(u64) -> Option<AttackHit>) -> Option<AttackHit> {
    (0..n).find_map(f)
}

/// First of `config.samples` sampled fields whose deformed image the network
/// does not classify as `label`.
pub fn random_attack(net: &Network, image: &Image, label: usize, config: &SamplerConfig) -> Result<Option<AttackHit>> {
    if net.input_len() != image.data().len() {
        return Err(Error::Contract(format!(
            "network expects {} inputs, image has {}",
            net.input_len(),
            image.data().len()
        )));
    }
    Ok(first_hit(config.samples as u64, |index| {
        let field = sample_indexed(image.width(), config, index);
        let deformed = image.deform(&field).ok()?;
        let pred = argmax(&net.forward(&network_input(&deformed)).ok()?);
        (pred != label).then_some(AttackHit { index, field, label: pred })
    }))
}

/// Sampled versus certified per-pixel ranges. Vectors are in the pixel
/// bounds layout (row-major pixels, channels innermost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub width: usize,
    pub channels: usize,
    pub samples: usize,
    pub sampled_lower: Vec<f64>,
    pub sampled_upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Mean over pixels and channels of `(s_u − s_l) / (u − l)`, counting
    /// zero-width bounds as 1.
    pub coverage: f64,
}

/// Empirical coverage of `bounds_map(image, budget)`.
pub fn estimate_coverage(image: &Image, config: &SamplerConfig) -> Result<CoverageReport> {
    let bounds = bounds_map(image, &config.budget);
    estimate_coverage_with(image, &bounds, config)
}

/// Empirical coverage of precomputed bounds. Fails with
/// [`Error::Unsound`] if any sample leaves them.
pub fn estimate_coverage_with(image: &Image, bounds: &PixelBounds, config: &SamplerConfig) -> Result<CoverageReport> {
    if config.samples < 2 {
        return Err(Error::Argument("coverage needs at least 2 samples".into()));
    }
    if bounds.width() != image.width() || bounds.channels() != image.channels() {
        return Err(Error::Argument("bounds and image shapes differ".into()));
    }
    let n = image.data().len();
    let extremes = |index: u64| -> Result<(Vec<f64>, Vec<f64>)> {
        let field = sample_indexed(image.width(), config, index);
        let v = image.deform(&field)?;
        Ok((v.data().to_vec(), v.data().to_vec()))
    };
    let merge = |a: Result<(Vec<f64>, Vec<f64>)>, b: Result<(Vec<f64>, Vec<f64>)>| {
        let (mut lo, mut hi) = a?;
        let (l2, h2) = b?;
        for k in 0..lo.len() {
            lo[k] = lo[k].min(l2[k]);
            hi[k] = hi[k].max(h2[k]);
        }
        Ok((lo, hi))
    };
    let identity = || Ok((vec![f64::INFINITY; n], vec![f64::NEG_INFINITY; n]));
    #[cfg(feature = "parallel")]
    let reduced = {
        use rayon::prelude::*;
        (0..config.samples as u64).into_par_iter().map(extremes).reduce(identity, merge)
    };
    #[cfg(not(feature = "parallel"))]
    let reduced = (0..config.samples as u64).map(extremes).fold(identity(), merge);
    let (s_lo, s_hi) = reduced?;

    let (lower, upper) = (bounds.lower(), bounds.upper());
    let mut total = 0.0;
    for k in 0..n {
        if s_lo[k] < lower[k] - CONTAINMENT_TOL || s_hi[k] > upper[k] + CONTAINMENT_TOL {
            let (w, ch) = (image.width(), image.channels());
            let (px, c) = (k / ch, k % ch);
            return Err(Error::Unsound(format!(
                "pixel ({}, {}) channel {c}: sampled [{}, {}] leaves bounds [{}, {}]",
                px / w + 1,
                px % w + 1,
                s_lo[k],
                s_hi[k],
                lower[k],
                upper[k]
            )));
        }
        let width = upper[k] - lower[k];
        total += if width <= 0.0 { 1.0 } else { ((s_hi[k] - s_lo[k]) / width).clamp(0.0, 1.0) };
    }
    Ok(CoverageReport {
        width: image.width(),
        channels: image.channels(),
        samples: config.samples,
        sampled_lower: s_lo,
        sampled_upper: s_hi,
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        coverage: total / n as f64,
    })
}
