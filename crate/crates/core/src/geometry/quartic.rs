//! Real roots of quartics via Durand–Kerner simultaneous iteration.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Iteration controls for [`durand_kerner`].
#[derive(Debug, Clone, Copy)]
pub struct DurandKerner {
    pub max_iter: usize,
    /// Convergence when the largest iterate movement drops to this value.
    pub tol: f64,
}

impl Default for DurandKerner {
    fn default() -> Self {
        DurandKerner {
            max_iter: 200,
            tol: 1e-14,
        }
    }
}

/// Raised when the iteration cap is hit; carries the best iterate.
#[derive(Debug, Clone)]
pub struct RootError {
    pub iterations: usize,
    pub movement: f64,
    pub best: [Complex64; 4],
}

impl std::fmt::Display for RootError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Durand-Kerner did not converge after {} iterations (last movement {:e})",
            self.iterations, self.movement
        )
    }
}

/// Evaluates a monic quartic `z⁴ + a₃z³ + a₂z² + a₁z + a₀` (`a = [a₀..a₃]`)
/// and the matching magnitude sum used for the backward-error test.
#[inline]
fn eval_monic(a: &[f64; 4], z: Complex64) -> (Complex64, f64) {
    let r = z.norm();
    let value = (((z + a[3]) * z + a[2]) * z + a[1]) * z + a[0];
    let scale = (((r + a[3].abs()) * r + a[2].abs()) * r + a[1].abs()) * r + a[0].abs();
    (value, scale)
}

/// All four complex roots of `c₀ + c₁z + c₂z² + c₃z³ + c₄z⁴`, `c₄ ≠ 0`.
///
/// Iterates start at `R·(0.4 + 0.9i)^k` with `R` the Cauchy root bound. The
/// iteration stops when the largest movement is at most `cfg.tol`, or when
/// every iterate is a root to within a few ulps of backward error (the usual
/// stopping rule near multiple roots, where movement stalls at `√ε`).
pub fn durand_kerner(coeffs: &[f64; 5], cfg: DurandKerner) -> std::result::Result<[Complex64; 4], RootError> {
    let lead = coeffs[4];
    let a = [coeffs[0] / lead, coeffs[1] / lead, coeffs[2] / lead, coeffs[3] / lead];
    let bound = 1.0 + a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut z = [
        Complex64::new(bound, 0.0),
        seed * bound,
        seed * seed * bound,
        seed * seed * seed * bound,
    ];

    let mut movement = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let mut next = z;
        movement = 0.0;
        let mut backward_ok = true;
        for k in 0..4 {
            let (value, scale) = eval_monic(&a, z[k]);
            if value.norm() > 16.0 * f64::EPSILON * scale {
                backward_ok = false;
            }
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..4 {
                if j != k {
                    denom *= z[k] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex64::new(f64::EPSILON * bound, 0.0);
            }
            let step = value / denom;
            next[k] = z[k] - step;
            movement = movement.max(step.norm());
        }
        if backward_ok {
            return Ok(z);
        }
        z = next;
        if !movement.is_finite() {
            break;
        }
        if movement <= cfg.tol {
            return Ok(z);
        }
    }
    Err(RootError {
        iterations: cfg.max_iter,
        movement,
        best: z,
    })
}

fn eval_real(c: &[f64; 5], x: f64) -> f64 {
    (((c[4] * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]
}

fn deriv_real(c: &[f64; 5], x: f64) -> f64 {
    ((4.0 * c[4] * x + 3.0 * c[3]) * x + 2.0 * c[2]) * x + c[1]
}

/// Newton polishing of a real root; keeps the best iterate by residual.
fn polish(c: &[f64; 5], mut x: f64) -> f64 {
    let mut best = (eval_real(c, x).abs(), x);
    for _ in 0..8 {
        let d = deriv_real(c, x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        x -= eval_real(c, x) / d;
        let r = eval_real(c, x).abs();
        if r < best.0 {
            best = (r, x);
        } else {
            break;
        }
    }
    best.1
}

/// Distinct real roots of `J + Kv + Lv² + Mv³ + Nv⁴`, sorted ascending.
///
/// Roots whose imaginary part exceeds `1e-7·(1 + |re|)` are discarded; the
/// survivors are Newton-polished and merged when closer than `1e-7`.
pub fn quartic_real_roots(j: f64, k: f64, l: f64, m: f64, n: f64) -> Result<Vec<f64>> {
    if n == 0.0 || ![j, k, l, m, n].iter().all(|c| c.is_finite()) {
        return Err(Error::Argument("quartic needs a finite non-zero leading coefficient".into()));
    }
    let coeffs = [j, k, l, m, n];
    let roots = durand_kerner(&coeffs, DurandKerner::default()).map_err(|e| Error::Solver(e.to_string()))?;
    let monic = [j / n, k / n, l / n, m / n, 1.0];
    let mut real: Vec<f64> = roots
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
        .map(|z| polish(&monic, z.re))
        .collect();
    real.sort_by(f64::total_cmp);
    real.dedup_by(|a, b| (*a - *b).abs() <= 1e-7);
    Ok(real)
}

/// Coefficients `[J, K, L, M, N]` of the quartic whose roots are the
/// `v`-coordinates of stationary points of `A + Bv + Cw + Dvw` on the circle
/// `v² + w² = δ²` (center at the origin), for `D ≠ 0`.
pub fn t2_quartic_coefficients(b: f64, c: f64, d: f64, delta: f64) -> [f64; 5] {
    let e = -b / (2.0 * d);
    let f = b * b / (4.0 * d * d);
    let g = c / d;
    let h = e * e + f;
    let p = delta * delta - h;
    [
        p * p - 4.0 * f * e * e,
        -2.0 * g * (p + 2.0 * e * e),
        g * g - 4.0 * (p + e * e),
        4.0 * g,
        4.0,
    ]
}

/// The same quartic after substituting `v = δx` and dividing by `δ⁴`, with
/// the identity `F = E²` applied so no large terms cancel. Roots `x` are
/// relative positions on the unit circle.
pub(crate) fn t2_quartic_scaled(b: f64, c: f64, d: f64, delta: f64) -> [f64; 5] {
    let bn = b / (d * delta);
    let cn = c / (d * delta);
    [1.0 - bn * bn, -2.0 * cn, cn * cn + bn * bn - 4.0, 4.0 * cn, 4.0]
}
