//! Extremal candidates of the bilinear interpolant over `B_δ^p(i, j) ∩ A_{mn}`.
//!
//! Interior extrema are impossible (the interpolant is affine in each
//! coordinate separately), so every routine here walks the boundary of the
//! intersection: axis-parallel pieces only need their endpoints, diagonal
//! `T₁` edges add the vertex of a parabola, and `T₂` arcs add the stationary
//! points found through the Lagrangian quartic.
//!
//! All coefficient arrays are `[A', B', C', D]` in displacement coordinates,
//! i.e. centered on the pixel.

use std::f64::consts::PI;

use super::quartic::{durand_kerner, t2_quartic_scaled, DurandKerner};
use crate::imaging::Region;

/// Coordinate padding applied around every root of the arc quartic.
pub(crate) const ROOT_PAD: f64 = 1e-9;
/// Arc samples used when root finding fails.
pub(crate) const FALLBACK_SAMPLES: usize = 4096;

#[inline]
fn cell_bounds(cell: Region) -> (f64, f64, f64, f64) {
    let (m, n) = (cell.m as f64, cell.n as f64);
    (m, m + 1.0, n, n + 1.0)
}

/// Corners of the rectangle `B_δ^∞ ∩ A_{mn}`.
pub(crate) fn inf_points(center: [f64; 2], delta: f64, cell: Region, out: &mut Vec<[f64; 2]>) {
    let (m0, m1, n0, n1) = cell_bounds(cell);
    let lo_v = m0.max(center[0] - delta);
    let hi_v = m1.min(center[0] + delta);
    let lo_w = n0.max(center[1] - delta);
    let hi_w = n1.min(center[1] + delta);
    if lo_v > hi_v || lo_w > hi_w {
        return;
    }
    out.extend([[lo_v, lo_w], [hi_v, lo_w], [lo_v, hi_w], [hi_v, hi_w]]);
}

/// The convex polygon `B_δ^1 ∩ A_{mn}`, clipped from the cell rectangle by
/// the four half-planes `±(v − i) ± (w − j) ≤ δ`.
pub(crate) fn l1_polygon(center: [f64; 2], delta: f64, cell: Region) -> Vec<[f64; 2]> {
    let (m0, m1, n0, n1) = cell_bounds(cell);
    let mut poly = vec![[m0, n0], [m1, n0], [m1, n1], [m0, n1]];
    for (sv, sw) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let level = |p: &[f64; 2]| sv * (p[0] - center[0]) + sw * (p[1] - center[1]);
        let mut clipped = Vec::with_capacity(poly.len() + 1);
        for k in 0..poly.len() {
            let p = poly[k];
            let q = poly[(k + 1) % poly.len()];
            let (fp, fq) = (level(&p), level(&q));
            let (p_in, q_in) = (fp <= delta, fq <= delta);
            if p_in {
                clipped.push(p);
            }
            if p_in != q_in {
                let t = (delta - fp) / (fq - fp);
                clipped.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        poly = clipped;
        if poly.is_empty() {
            break;
        }
    }
    poly
}

/// Vertices of `B_δ^1 ∩ A_{mn}` plus, per channel, the vertex of the
/// quadratic restriction on each diagonal edge when it falls strictly inside
/// the edge.
pub(crate) fn l1_points(
    center: [f64; 2],
    delta: f64,
    cell: Region,
    coeffs: &[[f64; 4]],
    out: &mut Vec<[f64; 2]>,
) {
    let poly = l1_polygon(center, delta, cell);
    out.extend_from_slice(&poly);
    if poly.len() < 2 {
        return;
    }
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let (dv, dw) = (q[0] - p[0], q[1] - p[1]);
        if dv == 0.0 || dw == 0.0 {
            continue;
        }
        let (pv, pw) = (p[0] - center[0], p[1] - center[1]);
        for &[_, b, c, d] in coeffs {
            // f(p + t(q - p)) = const + lin·t + quad·t²
            let quad = d * dv * dw;
            if quad == 0.0 {
                continue;
            }
            let lin = b * dv + c * dw + d * (pv * dw + pw * dv);
            let t = -lin / (2.0 * quad);
            if t > 0.0 && t < 1.0 {
                out.push([p[0] + t * dv, p[1] + t * dw]);
            }
        }
    }
}

/// Candidates on `B_δ^2 ∩ A_{mn}`. Returns the widening the caller must
/// apply to the interval when the arc had to be sampled (zero normally).
pub(crate) fn l2_points(
    center: [f64; 2],
    delta: f64,
    cell: Region,
    coeffs: &[[f64; 4]],
    solver: DurandKerner,
    out: &mut Vec<[f64; 2]>,
) -> f64 {
    let (m0, m1, n0, n1) = cell_bounds(cell);
    let r2 = delta * delta;
    let before = out.len();

    // Straight pieces: cell corners inside the disk.
    for corner in [[m0, n0], [m1, n0], [m0, n1], [m1, n1]] {
        let (a, b) = (corner[0] - center[0], corner[1] - center[1]);
        if a * a + b * b <= r2 {
            out.push(corner);
        }
    }
    // Arc endpoints: circle crossings of the cell edges.
    for v in [m0, m1] {
        let a = v - center[0];
        if a.abs() <= delta {
            let h = (r2 - a * a).max(0.0).sqrt();
            for w in [center[1] - h, center[1] + h] {
                if (n0..=n1).contains(&w) {
                    out.push([v, w]);
                }
            }
        }
    }
    for w in [n0, n1] {
        let b = w - center[1];
        if b.abs() <= delta {
            let h = (r2 - b * b).max(0.0).sqrt();
            for v in [center[0] - h, center[0] + h] {
                if (m0..=m1).contains(&v) {
                    out.push([v, w]);
                }
            }
        }
    }
    if out.len() == before && !reaches_cell(center, delta, cell) {
        return 0.0;
    }
    // Axis points, where the Lagrange elimination divides by zero.
    for p in [
        [center[0] - delta, center[1]],
        [center[0] + delta, center[1]],
        [center[0], center[1] - delta],
        [center[0], center[1] + delta],
    ] {
        if cell.contains(p) {
            out.push(p);
        }
    }

    let mut widening: f64 = 0.0;
    for &[_, b, c, d] in coeffs {
        if d == 0.0 {
            if b != 0.0 || c != 0.0 {
                let theta = c.atan2(b);
                for t in [theta, theta + PI] {
                    push_on_arc(center, delta, cell, t.cos(), t.sin(), out);
                }
            }
            continue;
        }
        match durand_kerner(&t2_quartic_scaled(b, c, d, delta), solver) {
            Ok(roots) => {
                // Every root's real part is tried, near-real or not: extra
                // points on the arc are feasible and cannot loosen the bound.
                let pad = ROOT_PAD / delta;
                for z in roots {
                    let x = z.re;
                    if !x.is_finite() || x.abs() > 1.0 + 1e-6 {
                        continue;
                    }
                    for xs in [x - pad, x, x + pad] {
                        let xs = xs.clamp(-1.0, 1.0);
                        let y = (1.0 - xs * xs).max(0.0).sqrt();
                        push_on_arc(center, delta, cell, xs, y, out);
                        push_on_arc(center, delta, cell, xs, -y, out);
                    }
                }
            }
            Err(err) => {
                log::warn!("{err}; sampling the arc of cell ({}, {}) instead", cell.m, cell.n);
                let step = 2.0 * PI / FALLBACK_SAMPLES as f64;
                for k in 0..FALLBACK_SAMPLES {
                    let t = k as f64 * step;
                    push_on_arc(center, delta, cell, t.cos(), t.sin(), out);
                }
                // |d/dθ f| ≤ δ(|B'| + |C'|) + |D|δ²; any in-cell arc point is
                // within one step of a retained sample or an arc endpoint.
                let lipschitz = delta * (b.abs() + c.abs()) + d.abs() * delta * delta;
                widening = widening.max(lipschitz * step);
            }
        }
    }
    widening
}

#[inline]
fn push_on_arc(center: [f64; 2], delta: f64, cell: Region, x: f64, y: f64, out: &mut Vec<[f64; 2]>) {
    let p = [center[0] + delta * x, center[1] + delta * y];
    if cell.contains(p) {
        out.push(p);
    }
}

fn reaches_cell(center: [f64; 2], delta: f64, cell: Region) -> bool {
    let (m0, m1, n0, n1) = cell_bounds(cell);
    let gv = (m0 - center[0]).max(center[0] - m1).max(0.0);
    let gw = (n0 - center[1]).max(center[1] - n1).max(0.0);
    gv * gv + gw * gw <= delta * delta
}
