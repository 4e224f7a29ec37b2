//! Linear bounding planes over a pixel's displacement and the
//! flow-constrained LP that concretizes input-layer expressions.
//!
//! For pixel `(i, j)` and channel `c`, a [`PlanePair`] bounds the deformed
//! value `x` as a function of the displacement `(v_x, v_y)`:
//!
//! ```text
//! λ₀ + λ₁ v_x + λ₂ v_y  ≤  x  ≤  υ₀ + υ₁ v_x + υ₂ v_y
//! ```
//!
//! Planes are fitted on the candidates of the `∞`-ball, which encloses the
//! `1`- and `2`-balls of the same radius, so they are sound for every norm.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{candidate_set, AttackBudget, Norm, PixelBounds};
use crate::imaging::Image;
use crate::linsolve::{lp_solve, LinearProgram, Relation, Sense, Status};

/// Lower `(λ₀, λ₁, λ₂)` and upper `(υ₀, υ₁, υ₂)` planes of one pixel channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePair {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

#[inline]
fn plane_at(p: &[f64; 3], d: [f64; 2]) -> f64 {
    p[0] + p[1] * d[0] + p[2] * d[1]
}

impl PlanePair {
    /// Constant planes `lo ≤ x ≤ hi`.
    pub fn flat(lo: f64, hi: f64) -> Self {
        PlanePair {
            lower: [lo, 0.0, 0.0],
            upper: [hi, 0.0, 0.0],
        }
    }

    pub fn lower_at(&self, d: [f64; 2]) -> f64 {
        plane_at(&self.lower, d)
    }

    pub fn upper_at(&self, d: [f64; 2]) -> f64 {
        plane_at(&self.upper, d)
    }
}

impl Serialize for PlanePair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let [a, b, c] = self.lower;
        let [d, e, f] = self.upper;
        [a, b, c, d, e, f].serialize(s)
    }
}

impl<'de> Deserialize<'de> for PlanePair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [a, b, c, e, f, g] = <[f64; 6]>::deserialize(d)?;
        Ok(PlanePair {
            lower: [a, b, c],
            upper: [e, f, g],
        })
    }
}

/// Planes for every pixel of an image. `None` marks a pixel without planes
/// (only its interval applies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingPlanes {
    pub width: usize,
    pub channels: usize,
    /// Row-major over pixels; each present entry holds one pair per channel.
    pub planes: Vec<Option<Vec<PlanePair>>>,
}

impl BoundingPlanes {
    pub fn empty(width: usize, channels: usize) -> Self {
        BoundingPlanes {
            width,
            channels,
            planes: vec![None; width * width],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes.len() != self.width * self.width {
            return Err(Error::Argument(format!(
                "planes for a width-{} image need {} pixel entries, got {}",
                self.width,
                self.width * self.width,
                self.planes.len()
            )));
        }
        if let Some(k) = self
            .planes
            .iter()
            .position(|p| p.as_ref().is_some_and(|v| v.len() != self.channels))
        {
            return Err(Error::Argument(format!("pixel entry {k} does not hold {} channels", self.channels)));
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> Option<PlanePair> {
        self.planes[(i - 1) * self.width + (j - 1)].as_ref().map(|v| v[c])
    }

    pub fn set(&mut self, i: usize, j: usize, pairs: Vec<PlanePair>) {
        self.planes[(i - 1) * self.width + (j - 1)] = Some(pairs);
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let planes: BoundingPlanes =
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        planes
            .validate()
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        Ok(planes)
    }
}

/// Which side of the value a plane bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneSide {
    Lower,
    Upper,
}

/// Shifts the offset of `plane` until it is sound at every candidate:
/// `plane(d) ≤ value` for a lower plane, `≥` for an upper plane, with no
/// tolerance.
pub fn repair_plane(plane: [f64; 3], side: PlaneSide, displacements: &[[f64; 2]], values: &[f64]) -> [f64; 3] {
    let mut p = plane;
    let violation = |p: &[f64; 3]| {
        displacements
            .iter()
            .zip(values)
            .map(|(&d, &v)| match side {
                PlaneSide::Lower => plane_at(p, d) - v,
                PlaneSide::Upper => v - plane_at(p, d),
            })
            .fold(0.0f64, f64::max)
    };
    let mut excess = violation(&p);
    while excess > 0.0 {
        let step = excess.max(f64::EPSILON * p[0].abs());
        match side {
            PlaneSide::Lower => p[0] -= step,
            PlaneSide::Upper => p[0] += step,
        }
        excess = violation(&p);
    }
    p
}

/// Candidate displacements of pixel `(i, j)` for the `∞`-ball of radius
/// `delta`, with each channel's interpolated value.
fn plane_candidates(image: &Image, i: usize, j: usize, delta: f64) -> Result<(Vec<[f64; 2]>, Vec<Vec<f64>>)> {
    let budget = AttackBudget::unconstrained(Norm::Linf, delta)?;
    let coords = candidate_set(image, i, j, &budget).unique_coords();
    let mut disp = Vec::with_capacity(coords.len());
    let mut values = vec![Vec::with_capacity(coords.len()); image.channels()];
    for coord in coords {
        let v = image.interpolate(coord)?;
        disp.push([coord[0] - i as f64, coord[1] - j as f64]);
        for (c, x) in v.into_iter().enumerate() {
            values[c].push(x);
        }
    }
    if disp.is_empty() {
        disp.push([0.0, 0.0]);
        for (c, vals) in values.iter_mut().enumerate() {
            vals.push(image.get(i, j, c));
        }
    }
    Ok((disp, values))
}

fn fit_one(disp: &[[f64; 2]], values: &[f64], side: PlaneSide) -> Result<[f64; 3]> {
    // Lower: maximize Σ plane(d) subject to plane(d) ≤ value, i.e. minimize
    // the summed slack; the upper plane mirrors it.
    let sense = match side {
        PlaneSide::Lower => Sense::Maximize,
        PlaneSide::Upper => Sense::Minimize,
    };
    let mut lp = LinearProgram::new(sense);
    let n = disp.len() as f64;
    let (sx, sy) = disp.iter().fold((0.0, 0.0), |(a, b), d| (a + d[0], b + d[1]));
    let l0 = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, n);
    let l1 = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, sx);
    let l2 = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, sy);
    let rel = match side {
        PlaneSide::Lower => Relation::Le,
        PlaneSide::Upper => Relation::Ge,
    };
    for (d, &v) in disp.iter().zip(values) {
        lp.add_constraint(vec![(l0, 1.0), (l1, d[0]), (l2, d[1])], rel, v);
    }
    let out = lp_solve(&lp)?;
    if out.status != Status::Optimal {
        return Err(Error::Solver(format!("plane fitting LP ended with status {:?}", out.status)));
    }
    let plane = to_vertex([out.x[l0], out.x[l1], out.x[l2]], side, disp, values);
    Ok(repair_plane(plane, side, disp, values))
}

/// Slides an optimal plane along the optimal face until three affinely
/// independent candidates are tight. Directions orthogonal to every tight
/// row keep the objective constant at an optimum.
fn to_vertex(mut p: [f64; 3], side: PlaneSide, disp: &[[f64; 2]], values: &[f64]) -> [f64; 3] {
    let rows: Vec<[f64; 3]> = disp.iter().map(|d| [1.0, d[0], d[1]]).collect();
    // Slack of each candidate, nonnegative when sound.
    let slack = |p: &[f64; 3], k: usize| {
        let y = plane_at(p, disp[k]);
        match side {
            PlaneSide::Lower => values[k] - y,
            PlaneSide::Upper => y - values[k],
        }
    };
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = |a: &[f64; 3], b: &[f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    for _ in 0..3 {
        let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Orthonormal basis of the tight rows.
        let mut basis: Vec<[f64; 3]> = Vec::new();
        for k in 0..rows.len() {
            if slack(&p, k).abs() > 1e-12 * scale {
                continue;
            }
            let mut r = rows[k];
            for b in &basis {
                let c = dot(&r, b);
                r = [r[0] - c * b[0], r[1] - c * b[1], r[2] - c * b[2]];
            }
            let n = dot(&r, &r).sqrt();
            if n > 1e-9 {
                basis.push([r[0] / n, r[1] / n, r[2] / n]);
            }
        }
        let z = match basis.len() {
            1 => {
                let b = basis[0];
                let axis = if b[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                cross(&b, &axis)
            }
            2 => cross(&basis[0], &basis[1]),
            _ => return p,
        };
        // Moving by t·z changes a candidate's slack by -t·(a·z) (lower side).
        let sign = match side {
            PlaneSide::Lower => 1.0,
            PlaneSide::Upper => -1.0,
        };
        let step = |z: [f64; 3]| {
            (0..rows.len())
                .filter_map(|k| {
                    let rate = sign * dot(&rows[k], &z);
                    (rate > 1e-12).then(|| slack(&p, k).max(0.0) / rate)
                })
                .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
        };
        let (z, t) = match step(z) {
            Some(t) => (z, t),
            None => {
                let neg = [-z[0], -z[1], -z[2]];
                match step(neg) {
                    Some(t) => (neg, t),
                    None => return p,
                }
            }
        };
        p = [p[0] + t * z[0], p[1] + t * z[1], p[2] + t * z[2]];
    }
    p
}

/// Fits sound lower and upper planes for every channel of pixel `(i, j)`
/// over displacements in the `∞`-ball of radius `delta`.
pub fn fit_planes(image: &Image, i: usize, j: usize, delta: f64) -> Result<Vec<PlanePair>> {
    if !image.contains_pixel(i, j) {
        return Err(Error::Argument(format!("pixel ({i}, {j}) outside the image")));
    }
    let (disp, values) = plane_candidates(image, i, j, delta)?;
    values
        .iter()
        .map(|vals| {
            Ok(PlanePair {
                lower: fit_one(&disp, vals, PlaneSide::Lower)?,
                upper: fit_one(&disp, vals, PlaneSide::Upper)?,
            })
        })
        .collect()
}

/// [`fit_planes`] for every pixel.
pub fn fit_all_planes(image: &Image, delta: f64) -> Result<BoundingPlanes> {
    let w = image.width();
    let pixels: Vec<(usize, usize)> = (1..=w).flat_map(|i| (1..=w).map(move |j| (i, j))).collect();
    let fit = |&(i, j): &(usize, usize)| fit_planes(image, i, j, delta).map(Some);
    #[cfg(feature = "parallel")]
    let planes: Result<Vec<_>> = {
        use rayon::prelude::*;
        pixels.par_iter().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let planes: Result<Vec<_>> = pixels.iter().map(fit).collect();
    Ok(BoundingPlanes {
        width: w,
        channels: image.channels(),
        planes: planes?,
    })
}

/// The 4-neighbourhood graph of a `W × W` pixel grid with flow bound `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    pub width: usize,
    pub gamma: f64,
    edges: Vec<((usize, usize), (usize, usize))>,
}

impl FlowGraph {
    pub fn new(width: usize, gamma: f64) -> Self {
        let mut edges = Vec::with_capacity(2 * width * width.saturating_sub(1));
        for i in 1..=width {
            for j in 1..=width {
                if i < width {
                    edges.push(((i, j), (i + 1, j)));
                }
                if j < width {
                    edges.push(((i, j), (i, j + 1)));
                }
            }
        }
        FlowGraph { width, gamma, edges }
    }

    /// Each undirected edge once, lower pixel first.
    pub fn edges(&self) -> &[((usize, usize), (usize, usize))] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let w = self.width;
        let mut out = Vec::with_capacity(4);
        if i > 1 {
            out.push((i - 1, j));
        }
        if i < w {
            out.push((i + 1, j));
        }
        if j > 1 {
            out.push((i, j - 1));
        }
        if j < w {
            out.push((i, j + 1));
        }
        out
    }

    /// Edges with both endpoints in `pixels`.
    pub fn restricted(&self, pixels: &BTreeSet<(usize, usize)>) -> Vec<((usize, usize), (usize, usize))> {
        self.edges
            .iter()
            .copied()
            .filter(|(a, b)| pixels.contains(a) && pixels.contains(b))
            .collect()
    }
}

/// Displacement-aware constraints on network inputs: which pixel each input
/// reads, its planes, and the flow edges between pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRelaxation {
    /// Pixel id of every network input.
    pub pixel_of: Vec<usize>,
    /// Planes of every network input (`None`: interval only).
    pub planes: Vec<Option<PlanePair>>,
    /// Displacement components are boxed to `[-delta, delta]`.
    pub delta: f64,
    #[serde(with = "crate::gamma_serde")]
    pub gamma: f64,
    /// Neighbouring pixel-id pairs subject to the flow bound.
    pub edges: Vec<(usize, usize)>,
}

/// Everything known about the network input: per-input intervals and,
/// optionally, the spatial constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRelaxation {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub spatial: Option<SpatialRelaxation>,
}

/// Index of pixel `(i, j)`, channel `c` in the channel-major (`C × W × W`)
/// input layout used by networks.
pub fn input_index(width: usize, i: usize, j: usize, c: usize) -> usize {
    c * width * width + (i - 1) * width + (j - 1)
}

impl InputRelaxation {
    /// Interval-only relaxation.
    pub fn intervals(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let r = InputRelaxation {
            lower,
            upper,
            spatial: None,
        };
        r.validate()?;
        Ok(r)
    }

    /// Relaxation of an image's deformations: per-input intervals from
    /// `bounds` and, when `planes` is given, planes and flow edges. Inputs are
    /// laid out channel-major.
    pub fn from_image_bounds(
        bounds: &PixelBounds,
        planes: Option<&BoundingPlanes>,
        budget: &AttackBudget,
    ) -> Result<Self> {
        let (w, ch) = (bounds.width(), bounds.channels());
        let n = w * w * ch;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut pixel_of = vec![0; n];
        let mut plane_of = vec![None; n];
        if let Some(p) = planes {
            p.validate()?;
            if p.width != w || p.channels != ch {
                return Err(Error::Argument("planes and bounds describe different image shapes".into()));
            }
        }
        for c in 0..ch {
            for i in 1..=w {
                for j in 1..=w {
                    let k = input_index(w, i, j, c);
                    let (l, u) = bounds.get(i, j, c);
                    lower[k] = l;
                    upper[k] = u;
                    pixel_of[k] = (i - 1) * w + (j - 1);
                    plane_of[k] = planes.and_then(|p| p.get(i, j, c));
                }
            }
        }
        let spatial = planes.map(|_| {
            let edges = if budget.gamma.is_finite() {
                FlowGraph::new(w, budget.gamma)
                    .edges()
                    .iter()
                    .map(|&((a, b), (c, d))| ((a - 1) * w + (b - 1), (c - 1) * w + (d - 1)))
                    .collect()
            } else {
                Vec::new()
            };
            SpatialRelaxation {
                pixel_of,
                planes: plane_of,
                delta: budget.delta,
                gamma: budget.gamma,
                edges,
            }
        });
        let r = InputRelaxation { lower, upper, spatial };
        r.validate()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Argument("lower and upper input bounds differ in length".into()));
        }
        if let Some(k) = (0..self.len()).find(|&k| !(self.lower[k] <= self.upper[k]) || !self.lower[k].is_finite()) {
            return Err(Error::Argument(format!(
                "input {k} has invalid interval [{}, {}]",
                self.lower[k], self.upper[k]
            )));
        }
        if let Some(s) = &self.spatial {
            if s.pixel_of.len() != self.len() || s.planes.len() != self.len() {
                return Err(Error::Argument("spatial relaxation does not cover every input".into()));
            }
            if !(s.delta >= 0.0) || s.gamma.is_nan() || s.gamma < 0.0 {
                return Err(Error::Argument("spatial relaxation needs delta >= 0 and gamma >= 0".into()));
            }
        }
        Ok(())
    }

    /// Whether finite flow constraints are in force.
    pub fn has_flow(&self) -> bool {
        self.spatial.as_ref().is_some_and(|s| s.gamma.is_finite())
    }
}

/// `constant + Σ coeff · input[index]`, an affine form over network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    /// Builds from a dense coefficient vector, dropping zeros.
    pub fn from_dense(dense: &[f64], constant: f64) -> Self {
        AffineExpr {
            coeffs: dense.iter().copied().enumerate().filter(|&(_, a)| a != 0.0).collect(),
            constant,
        }
    }

    /// Minimum over the input box (interval substitution).
    pub fn interval_min(&self, lower: &[f64], upper: &[f64]) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .map(|&(k, a)| if a >= 0.0 { a * lower[k] } else { a * upper[k] })
                .sum::<f64>()
    }
}

/// Variables a tightening LP created for the inputs and pixels it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialVars {
    /// `(input index, LP variable)` per covered input.
    pub inputs: Vec<(usize, usize)>,
    /// `pixel id → (v_x variable, v_y variable)`.
    pub displacement: BTreeMap<usize, [usize; 2]>,
}

/// Adds displacement variables, plane rows and flow rows for the given input
/// variables to `lp`. Inputs without planes only keep their box.
pub fn add_spatial_rows(lp: &mut LinearProgram, inputs: &[(usize, usize)], spatial: &SpatialRelaxation) -> SpatialVars {
    let mut displacement = BTreeMap::new();
    let d = spatial.delta;
    for &(k, var) in inputs {
        let Some(plane) = spatial.planes[k] else { continue };
        let pixel = spatial.pixel_of[k];
        let [vx, vy] = *displacement
            .entry(pixel)
            .or_insert_with(|| [lp.add_var(-d, d, 0.0), lp.add_var(-d, d, 0.0)]);
        let [l0, l1, l2] = plane.lower;
        let [u0, u1, u2] = plane.upper;
        lp.add_constraint(vec![(var, 1.0), (vx, -l1), (vy, -l2)], Relation::Ge, l0);
        lp.add_constraint(vec![(var, 1.0), (vx, -u1), (vy, -u2)], Relation::Le, u0);
    }
    if spatial.gamma.is_finite() {
        for &(a, b) in &spatial.edges {
            let (Some(&va), Some(&vb)) = (displacement.get(&a), displacement.get(&b)) else {
                continue;
            };
            for comp in 0..2 {
                let row = vec![(va[comp], 1.0), (vb[comp], -1.0)];
                lp.add_constraint(row.clone(), Relation::Le, spatial.gamma);
                lp.add_constraint(row, Relation::Ge, -spatial.gamma);
            }
        }
    }
    SpatialVars {
        inputs: inputs.to_vec(),
        displacement,
    }
}

/// A tightening LP together with its variable layout.
#[derive(Debug, Clone)]
pub struct TighteningLp {
    pub lp: LinearProgram,
    pub vars: SpatialVars,
}

/// LP whose minimum is a sound lower bound of `expr` over every input
/// consistent with the relaxation: intervals, planes of the inputs `expr`
/// references, and flow edges among their pixels.
pub fn build_tightening_lp(expr: &AffineExpr, relaxation: &InputRelaxation) -> Result<TighteningLp> {
    let n = relaxation.len();
    if let Some(&(k, _)) = expr.coeffs.iter().find(|&&(k, _)| k >= n) {
        return Err(Error::Contract(format!(
            "expression references neuron {k}, but only the {n} network inputs may appear"
        )));
    }
    let mut lp = LinearProgram::new(Sense::Minimize);
    lp.constant = expr.constant;
    let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
    for &(k, a) in &expr.coeffs {
        *merged.entry(k).or_insert(0.0) += a;
    }
    let inputs: Vec<(usize, usize)> = merged
        .into_iter()
        .filter(|&(_, a)| a != 0.0)
        .map(|(k, a)| (k, lp.add_var(relaxation.lower[k], relaxation.upper[k], a)))
        .collect();
    let vars = match &relaxation.spatial {
        Some(s) => add_spatial_rows(&mut lp, &inputs, s),
        None => SpatialVars {
            inputs,
            displacement: BTreeMap::new(),
        },
    };
    if lp.num_vars() == 0 {
        // Constant expression: keep one fixed dummy so the program is valid.
        lp.add_var(0.0, 0.0, 0.0);
    }
    Ok(TighteningLp { lp, vars })
}

/// Minimum of `expr` under the relaxation (LP when spatial constraints are
/// present, interval substitution otherwise).
pub fn minimize_expr(expr: &AffineExpr, relaxation: &InputRelaxation) -> Result<f64> {
    if relaxation.spatial.is_none() {
        return Ok(expr.interval_min(&relaxation.lower, &relaxation.upper));
    }
    let t = build_tightening_lp(expr, relaxation)?;
    let out = lp_solve(&t.lp)?;
    match out.status {
        Status::Optimal => Ok(out.objective),
        other => Err(Error::Solver(format!("tightening LP ended with status {other:?}"))),
    }
}
