//! Tight per-pixel interval bounds over all `T_p`-bounded deformations.
//!
//! For a pixel `(i, j)` and budget `δ`, the deformed value ranges over the
//! interpolant on `B_δ^p(i, j)` (clipped to the image). The range is the
//! union over every reachable interpolation region of the interpolant's range
//! on `B_δ^p ∩ A_{mn}`, and each of those is attained at one of finitely many
//! boundary candidates (see [`candidates_inf`], [`candidates_l1`],
//! [`candidates_l2`]).

mod candidates;
mod quartic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Patch, Region, RegionCoeffs};

pub use quartic::{durand_kerner, quartic_real_roots, t2_quartic_coefficients, DurandKerner, RootError};

/// The `ℓ_p` norm bounding each pixel's displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Linf,
}

impl Norm {
    pub fn length(self, d: [f64; 2]) -> f64 {
        match self {
            Norm::L1 => d[0].abs() + d[1].abs(),
            Norm::L2 => d[0].hypot(d[1]),
            Norm::Linf => d[0].abs().max(d[1].abs()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::Linf => "inf",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "∞" => Ok(Norm::Linf),
            other => Err(Error::Argument(format!("unknown norm {other:?} (expected 1, 2 or inf)"))),
        }
    }
}

/// Displacement budget `‖τ‖_{T_p} ≤ δ` together with the flow bound `γ`
/// (`f64::INFINITY` disables the flow constraints).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub norm: Norm,
    pub delta: f64,
    #[serde(with = "crate::gamma_serde")]
    pub gamma: f64,
}

impl AttackBudget {
    pub fn new(norm: Norm, delta: f64, gamma: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Argument(format!("delta must be finite and non-negative, got {delta}")));
        }
        if gamma.is_nan() || gamma < 0.0 {
            return Err(Error::Argument(format!("gamma must be non-negative, got {gamma}")));
        }
        Ok(AttackBudget { norm, delta, gamma })
    }

    /// Budget without flow constraints.
    pub fn unconstrained(norm: Norm, delta: f64) -> Result<Self> {
        AttackBudget::new(norm, delta, f64::INFINITY)
    }

    pub fn has_flow(&self) -> bool {
        self.gamma.is_finite()
    }
}

/// Regions `A_{mn}` that intersect `B_δ^p(i, j)`, in row-major order.
pub fn reachable_regions(width: usize, i: usize, j: usize, budget: &AttackBudget) -> Vec<Region> {
    if width < 2 {
        return Vec::new();
    }
    let (ci, cj) = (i as f64, j as f64);
    let delta = budget.delta;
    let span = |c: f64| {
        let lo = ((c - delta).floor() as i64 - 1).max(1) as usize;
        let hi = ((c + delta).ceil() as i64).min(width as i64 - 1).max(0) as usize;
        lo..=hi
    };
    let mut out = Vec::new();
    for m in span(ci) {
        for n in span(cj) {
            let gv = (m as f64 - ci).max(ci - (m as f64 + 1.0)).max(0.0);
            let gw = (n as f64 - cj).max(cj - (n as f64 + 1.0)).max(0.0);
            if budget.norm.length([gv, gw]) <= delta {
                out.push(Region { m, n });
            }
        }
    }
    out
}

fn centered_from_coeffs(i: usize, j: usize, rc: &RegionCoeffs) -> [f64; 4] {
    let (ci, cj) = (i as f64, j as f64);
    [
        rc.a + rc.b * ci + rc.c * cj + rc.d * ci * cj,
        rc.b + rc.d * cj,
        rc.c + rc.d * ci,
        rc.d,
    ]
}

fn region_of(rc: &RegionCoeffs) -> Region {
    Region { m: rc.m, n: rc.n }
}

/// Corners of `B_δ^∞(i, j) ∩ A_{mn}`; empty when they do not meet.
pub fn candidates_inf(i: usize, j: usize, delta: f64, coeffs: &RegionCoeffs) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    candidates::inf_points([i as f64, j as f64], delta, region_of(coeffs), &mut out);
    out
}

/// Vertices of `B_δ^1(i, j) ∩ A_{mn}` plus interior extrema along its
/// diagonal edges.
pub fn candidates_l1(i: usize, j: usize, delta: f64, coeffs: &RegionCoeffs) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let centered = [centered_from_coeffs(i, j, coeffs)];
    candidates::l1_points([i as f64, j as f64], delta, region_of(coeffs), &centered, &mut out);
    out
}

/// Candidates of `B_δ^2(i, j) ∩ A_{mn}`: corners, arc endpoints, axis
/// points and the stationary points of the interpolant on the arc.
pub fn candidates_l2(i: usize, j: usize, delta: f64, coeffs: &RegionCoeffs) -> L2Candidates {
    let mut points = Vec::new();
    let centered = [centered_from_coeffs(i, j, coeffs)];
    let widening = candidates::l2_points(
        [i as f64, j as f64],
        delta,
        region_of(coeffs),
        &centered,
        DurandKerner::default(),
        &mut points,
    );
    L2Candidates { points, widening }
}

/// Output of [`candidates_l2`]. `widening` is non-zero only when the arc
/// quartic failed to converge and the arc was sampled instead.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Candidates {
    pub points: Vec<[f64; 2]>,
    pub widening: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub coord: [f64; 2],
    pub region: Region,
}

/// Every candidate coordinate for one pixel, across all reachable regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub pixel: (usize, usize),
    pub entries: Vec<Candidate>,
    /// Amount by which intervals must be widened (non-zero only after a
    /// root-finding fallback).
    pub widening: f64,
}

impl CandidateSet {
    /// Distinct candidate coordinates (regions dropped); order is stable.
    pub fn unique_coords(&self) -> Vec<[f64; 2]> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|c| seen.insert((c.coord[0].to_bits(), c.coord[1].to_bits())))
            .map(|c| c.coord)
            .collect()
    }
}

/// Collects the candidates of pixel `(i, j)` for every channel.
pub fn candidate_set(image: &Image, i: usize, j: usize, budget: &AttackBudget) -> CandidateSet {
    candidate_set_with(image, i, j, budget, DurandKerner::default())
}

pub(crate) fn candidate_set_with(
    image: &Image,
    i: usize,
    j: usize,
    budget: &AttackBudget,
    solver: DurandKerner,
) -> CandidateSet {
    let center = [i as f64, j as f64];
    let delta = budget.delta;
    let mut entries = Vec::new();
    let mut widening: f64 = 0.0;
    let mut points = Vec::new();
    let mut centered = Vec::with_capacity(image.channels());
    for region in reachable_regions(image.width(), i, j, budget) {
        points.clear();
        if delta == 0.0 {
            points.push(center);
        } else {
            centered.clear();
            if budget.norm != Norm::Linf {
                centered.extend(
                    (0..image.channels()).map(|c| Patch::new(image, c, region).centered(center[0], center[1])),
                );
            }
            match budget.norm {
                Norm::Linf => candidates::inf_points(center, delta, region, &mut points),
                Norm::L1 => candidates::l1_points(center, delta, region, &centered, &mut points),
                Norm::L2 => {
                    let w = candidates::l2_points(center, delta, region, &centered, solver, &mut points);
                    widening = widening.max(w);
                }
            }
        }
        entries.extend(points.iter().map(|&coord| Candidate { coord, region }));
    }
    CandidateSet {
        pixel: (i, j),
        entries,
        widening,
    }
}

/// Per-channel `(lower, upper)` interval of a candidate set.
fn interval_of(image: &Image, set: &CandidateSet) -> Vec<(f64, f64)> {
    let (i, j) = set.pixel;
    if set.entries.is_empty() {
        return image.pixel(i, j).iter().map(|&v| (v, v)).collect();
    }
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); image.channels()];
    let mut last: Option<Region> = None;
    let mut patches: Vec<Patch> = Vec::with_capacity(image.channels());
    for cand in &set.entries {
        if last != Some(cand.region) {
            patches.clear();
            patches.extend((0..image.channels()).map(|c| Patch::new(image, c, cand.region)));
            last = Some(cand.region);
        }
        for (slot, patch) in out.iter_mut().zip(&patches) {
            let v = patch.eval(cand.coord[0], cand.coord[1]);
            slot.0 = slot.0.min(v);
            slot.1 = slot.1.max(v);
        }
    }
    if set.widening > 0.0 {
        for slot in &mut out {
            slot.0 -= set.widening;
            slot.1 += set.widening;
        }
    }
    out
}

/// Tight `[l, u]` per channel for pixel `(i, j)` over all displacements in
/// `B_δ^p(i, j)` that stay inside the image.
pub fn pixel_interval(image: &Image, i: usize, j: usize, budget: &AttackBudget) -> Result<Vec<(f64, f64)>> {
    if !image.contains_pixel(i, j) {
        return Err(Error::Argument(format!("pixel ({i}, {j}) outside a width-{} image", image.width())));
    }
    Ok(interval_of(image, &candidate_set(image, i, j, budget)))
}

/// Per-pixel, per-channel interval bounds for a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBounds {
    width: usize,
    channels: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PixelBounds {
    pub fn new(width: usize, channels: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let len = width * width * channels;
        if lower.len() != len || upper.len() != len {
            return Err(Error::Argument(format!("pixel bounds need {len} entries per side")));
        }
        if let Some(k) = (0..len).find(|&k| !(lower[k] <= upper[k])) {
            return Err(Error::Argument(format!("lower bound exceeds upper bound at entry {k}")));
        }
        Ok(PixelBounds {
            width,
            channels,
            lower,
            upper,
        })
    }

    /// Zero-width bounds equal to the image itself.
    pub fn exact(image: &Image) -> Self {
        PixelBounds {
            width: image.width(),
            channels: image.channels(),
            lower: image.data().to_vec(),
            upper: image.data().to_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Lower bounds in the image's row-major, channel-interleaved order.
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> (f64, f64) {
        let k = ((i - 1) * self.width + (j - 1)) * self.channels + c;
        (self.lower[k], self.upper[k])
    }

    /// Whether every value of `image` lies inside the bounds.
    pub fn contains(&self, image: &Image) -> bool {
        image.width() == self.width
            && image.channels() == self.channels
            && image
                .data()
                .iter()
                .enumerate()
                .all(|(k, &v)| self.lower[k] <= v && v <= self.upper[k])
    }
}

#[derive(Serialize, Deserialize)]
struct PixelBoundsJson {
    width: usize,
    channels: usize,
    l: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

impl Serialize for PixelBounds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let per_channel = |src: &[f64]| -> Vec<Vec<f64>> {
            (0..self.channels)
                .map(|c| src.iter().skip(c).step_by(self.channels).copied().collect())
                .collect()
        };
        PixelBoundsJson {
            width: self.width,
            channels: self.channels,
            l: per_channel(&self.lower),
            u: per_channel(&self.upper),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PixelBounds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PixelBoundsJson::deserialize(d)?;
        let plane = raw.width * raw.width;
        let interleave = |src: Vec<Vec<f64>>| -> std::result::Result<Vec<f64>, D::Error> {
            if src.len() != raw.channels || src.iter().any(|c| c.len() != plane) {
                return Err(serde::de::Error::custom("bounds shape does not match width/channels"));
            }
            Ok((0..plane)
                .flat_map(|p| src.iter().map(move |c| c[p]))
                .collect())
        };
        let lower = interleave(raw.l)?;
        let upper = interleave(raw.u)?;
        PixelBounds::new(raw.width, raw.channels, lower, upper).map_err(serde::de::Error::custom)
    }
}

/// Applies [`pixel_interval`] to every pixel.
pub fn bounds_map(image: &Image, budget: &AttackBudget) -> PixelBounds {
    let w = image.width();
    let ch = image.channels();
    let row = |i: usize| -> Vec<(f64, f64)> {
        (1..=w)
            .flat_map(|j| interval_of(image, &candidate_set(image, i, j, budget)))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<(f64, f64)>> = {
        use rayon::prelude::*;
        (1..=w).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<(f64, f64)>> = (1..=w).map(row).collect();

    let mut lower = Vec::with_capacity(w * w * ch);
    let mut upper = Vec::with_capacity(w * w * ch);
    for (l, u) in rows.into_iter().flatten() {
        lower.push(l);
        upper.push(u);
    }
    PixelBounds {
        width: w,
        channels: ch,
        lower,
        upper,
    }
}

/// Which end of the interval a witness should attain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

/// A displacement `d` with `‖d‖_p ≤ δ`, `(i, j) + d` inside the image, whose
/// interpolated value equals the lower (`Min`) or upper (`Max`) bound.
pub fn extremal_witness(
    image: &Image,
    i: usize,
    j: usize,
    budget: &AttackBudget,
    sense: Extremum,
) -> Result<[f64; 2]> {
    if image.channels() != 1 {
        return Err(Error::Unsupported(
            "extremal witnesses exist per channel only for single-channel images".into(),
        ));
    }
    if !image.contains_pixel(i, j) {
        return Err(Error::Argument(format!("pixel ({i}, {j}) outside the image")));
    }
    let set = candidate_set(image, i, j, budget);
    let mut best: Option<(f64, [f64; 2])> = None;
    let mut last: Option<(Region, Patch)> = None;
    for cand in &set.entries {
        let patch = match last {
            Some((r, p)) if r == cand.region => p,
            _ => {
                let p = Patch::new(image, 0, cand.region);
                last = Some((cand.region, p));
                p
            }
        };
        let v = patch.eval(cand.coord[0], cand.coord[1]);
        let better = match (best, sense) {
            (None, _) => true,
            (Some((b, _)), Extremum::Min) => v < b,
            (Some((b, _)), Extremum::Max) => v > b,
        };
        if better {
            best = Some((v, cand.coord));
        }
    }
    let Some((_, coord)) = best else {
        return Ok([0.0, 0.0]);
    };
    let mut d = [coord[0] - i as f64, coord[1] - j as f64];
    // Rounding in the candidate construction can leave d a few ulps outside
    // the ball; pull it back toward the pixel.
    let mut len = budget.norm.length(d);
    while len > budget.delta {
        let s = if budget.delta == 0.0 { 0.0 } else { budget.delta / len * (1.0 - f64::EPSILON) };
        d = [d[0] * s, d[1] * s];
        len = budget.norm.length(d);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::bilinear_coeffs;

    fn budget(norm: Norm, delta: f64) -> AttackBudget {
        AttackBudget::unconstrained(norm, delta).unwrap()
    }

    fn bright_pixel(width: usize, at: (usize, usize)) -> Image {
        Image::from_fn(width, 1, |i, j, _| if (i, j) == at { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn regions_at_zero_delta() {
        let r = reachable_regions(6, 3, 4, &budget(Norm::L2, 0.0));
        assert_eq!(
            r,
            vec![Region { m: 2, n: 3 }, Region { m: 2, n: 4 }, Region { m: 3, n: 3 }, Region { m: 3, n: 4 }]
        );
        assert_eq!(reachable_regions(6, 1, 1, &budget(Norm::L1, 0.0)), vec![Region { m: 1, n: 1 }]);
    }

    #[test]
    fn regions_half_delta_inf() {
        assert_eq!(reachable_regions(6, 3, 3, &budget(Norm::Linf, 0.5)).len(), 4);
    }

    #[test]
    fn inf_candidates_upper_right_quadrant() {
        let img = Image::constant(6, 1, 0.0).unwrap();
        let rc = bilinear_coeffs(&img, 0, 3, 3).unwrap();
        let mut pts = candidates_inf(3, 3, 0.5, &rc);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, vec![[3.0, 3.0], [3.0, 3.5], [3.5, 3.0], [3.5, 3.5]]);
        let full = candidates_inf(3, 3, 1.0, &rc);
        for corner in [[3.0, 3.0], [4.0, 3.0], [3.0, 4.0], [4.0, 4.0]] {
            assert!(full.contains(&corner));
        }
        let far = bilinear_coeffs(&img, 0, 5, 5).unwrap();
        assert!(candidates_inf(3, 3, 0.5, &far).is_empty());
    }

    #[test]
    fn l1_affine_patch_has_only_vertices() {
        let img = Image::from_fn(5, 1, |i, j, _| 0.1 * i as f64 + 0.05 * j as f64).unwrap();
        let rc = bilinear_coeffs(&img, 0, 2, 2).unwrap();
        assert!(rc.d.abs() < 1e-15);
        let pts = candidates_l1(2, 2, 0.8, &rc);
        let poly = candidates::l1_polygon([2.0, 2.0], 0.8, Region { m: 2, n: 2 });
        assert_eq!(pts, poly);
    }

    #[test]
    fn l1_symmetric_patch_stationary_midpoint() {
        // Corners (m,n)=0, (m+1,n)=1, (m,n+1)=1, (m+1,n+1)=0 on the cell of
        // pixel (2,2): along the diagonal edge v + w = 2 + 2δ... take δ = 1
        // so the edge runs from (3,2) to (2,3); f = s + t − 2st peaks at the
        // midpoint with value 1 − 2·0.25 = 0.5 vs endpoints 1.
        // Use the opposite sign: corners (0,1,1,0) → minimum 0.5 < 1 on the
        // edge, and the maximum along the other diagonal...
        let vals = |i: usize, j: usize| match (i, j) {
            (2, 2) => 0.0,
            (3, 2) => 1.0,
            (2, 3) => 1.0,
            (3, 3) => 0.0,
            _ => 0.0,
        };
        let img = Image::from_fn(4, 1, |i, j, _| vals(i, j)).unwrap();
        let rc = bilinear_coeffs(&img, 0, 2, 2).unwrap();
        let pts = candidates_l1(2, 2, 1.0, &rc);
        assert!(pts.iter().any(|p| (p[0] - 2.5).abs() < 1e-12 && (p[1] - 2.5).abs() < 1e-12));
        let mid = rc.eval(2.5, 2.5);
        assert!((mid - 0.5).abs() < 1e-12);
        // The restriction is a downward parabola with endpoint values 1 and 1.
        assert!(mid < rc.eval(3.0, 2.0) && mid < rc.eval(2.0, 3.0));
    }

    #[test]
    fn l2_constant_patch_only_endpoints() {
        let img = Image::constant(5, 1, 0.3).unwrap();
        let rc = bilinear_coeffs(&img, 0, 2, 2).unwrap();
        let c = candidates_l2(3, 3, 0.7, &rc);
        assert_eq!(c.widening, 0.0);
        assert!(!c.points.is_empty());
        assert!(c.points.iter().all(|p| (rc.eval(p[0], p[1]) - 0.3).abs() < 1e-12));
    }

    #[test]
    fn zero_delta_interval_is_pixel() {
        let img = Image::from_fn(5, 2, |i, j, c| ((i * 3 + j * 5 + c) % 7) as f64 / 7.0).unwrap();
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            for (i, j) in [(1, 1), (3, 2), (5, 5)] {
                let iv = pixel_interval(&img, i, j, &budget(norm, 0.0)).unwrap();
                for (c, (l, u)) in iv.into_iter().enumerate() {
                    assert_eq!(l, img.get(i, j, c));
                    assert_eq!(u, img.get(i, j, c));
                }
            }
        }
    }

    #[test]
    fn constant_image_interval() {
        let img = Image::constant(5, 1, 0.42).unwrap();
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            for delta in [0.3, 1.0, 2.5] {
                let (l, u) = pixel_interval(&img, 3, 2, &budget(norm, delta)).unwrap()[0];
                assert!((l - 0.42).abs() < 1e-12 && (u - 0.42).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bright_pixel_neighbor_interval() {
        let img = bright_pixel(7, (4, 4));
        let (l, u) = pixel_interval(&img, 5, 4, &budget(Norm::Linf, 0.5)).unwrap()[0];
        assert_eq!(l, 0.0);
        assert_eq!(u, 0.5);
        let d = extremal_witness(&img, 5, 4, &budget(Norm::Linf, 0.5), Extremum::Max).unwrap();
        assert_eq!(img.interpolate([5.0 + d[0], 4.0 + d[1]]).unwrap()[0], 0.5);
    }

    #[test]
    fn witness_at_zero_delta() {
        let img = bright_pixel(4, (2, 2));
        for sense in [Extremum::Min, Extremum::Max] {
            assert_eq!(extremal_witness(&img, 2, 3, &budget(Norm::L2, 0.0), sense).unwrap(), [0.0, 0.0]);
        }
    }

    #[test]
    fn witness_rejects_multichannel() {
        let img = Image::constant(3, 3, 0.1).unwrap();
        assert!(matches!(
            extremal_witness(&img, 2, 2, &budget(Norm::L1, 0.5), Extremum::Min),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn forced_fallback_is_sound_and_widened() {
        let img = Image::from_fn(5, 1, |i, j, _| ((i * 7 + j * 13) % 11) as f64 / 11.0).unwrap();
        let b = budget(Norm::L2, 0.8);
        let exact = interval_of(&img, &candidate_set(&img, 3, 3, &b))[0];
        let set = candidate_set_with(&img, 3, 3, &b, DurandKerner { max_iter: 0, tol: 1e-14 });
        assert!(set.widening > 0.0);
        let loose = interval_of(&img, &set)[0];
        assert!(loose.0 <= exact.0 && loose.1 >= exact.1);
    }

    #[test]
    fn bounds_json_layout() {
        let img = Image::from_fn(2, 2, |i, j, c| (i * 10 + j) as f64 + c as f64 * 100.0).unwrap();
        let pb = PixelBounds::exact(&img);
        let v = serde_json::to_value(&pb).unwrap();
        assert_eq!(v["l"][1], serde_json::json!([111.0, 112.0, 121.0, 122.0]));
        let back: PixelBounds = serde_json::from_value(v).unwrap();
        assert_eq!(back, pb);
    }

    #[test]
    fn budget_validation() {
        assert!(AttackBudget::new(Norm::L2, -0.1, 1.0).is_err());
        assert!(AttackBudget::new(Norm::L2, 0.1, f64::NAN).is_err());
        let b = AttackBudget::new(Norm::Linf, 0.5, f64::INFINITY).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"norm":"inf","delta":0.5,"gamma":"inf"}"#);
        assert_eq!(serde_json::from_str::<AttackBudget>(&s).unwrap(), b);
    }
}
