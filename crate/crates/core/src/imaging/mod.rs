//! Images, bilinear interpolation and vector-field deformations.
//!
//! Pixel coordinates are 1-based: pixel `(i, j)` with `i, j ∈ {1, …, W}`,
//! where `i` indexes rows and `j` indexes columns. A displacement `(dx, dy)`
//! moves pixel `(i, j)` to the real coordinate `(i + dx, j + dy)`, so `dx`
//! runs along rows and `dy` along columns. The interpolation region
//! `A_{mn} = [m, m+1] × [n, n+1]` is the unit cell whose lower corner is the
//! grid point `(m, n)`, `1 ≤ m, n ≤ W − 1`.

mod idx;
mod tensor;

pub use idx::{load_idx, load_idx_labels, read_idx, write_idx};
pub use tensor::{load_tensor_json, save_tensor_json, tensor_from_json, tensor_to_json};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Norm;

/// A `W × W` image with `C` channels, stored row-major with interleaved
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || channels == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive (width {width}, channels {channels})"
            )));
        }
        if data.len() != width * width * channels {
            return Err(Error::Argument(format!(
                "expected {} values for a {width}x{width}x{channels} image, got {}",
                width * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite pixel value at index {pos}")));
        }
        Ok(Image { width, channels, data })
    }

    /// Builds an image from a function of the 1-based pixel coordinates and
    /// the 0-based channel.
    pub fn from_fn(
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * width * channels);
        for i in 1..=width {
            for j in 1..=width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Image::new(width, channels, data)
    }

    pub fn constant(width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(width, channels, vec![value; width * width * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.width
    }

    /// Raw values in row-major, channel-interleaved order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.width && j >= 1 && j <= self.width);
        ((i - 1) * self.width + (j - 1)) * self.channels
    }

    /// Value of channel `c` at pixel `(i, j)` (1-based).
    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.offset(i, j) + c]
    }

    /// All channels of pixel `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.channels]
    }

    pub fn contains_pixel(&self, i: usize, j: usize) -> bool {
        i >= 1 && j >= 1 && i <= self.width && j <= self.width
    }

    /// Whether a real coordinate lies in the image square `[1, W]²`.
    pub fn contains_coord(&self, coord: [f64; 2]) -> bool {
        let hi = self.width as f64;
        coord[0] >= 1.0 && coord[0] <= hi && coord[1] >= 1.0 && coord[1] <= hi
    }

    /// Bilinear interpolation at a real coordinate, one value per channel.
    pub fn interpolate(&self, coord: [f64; 2]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.interpolate_into(coord, &mut out)?;
        Ok(out)
    }

    /// Like [`Image::interpolate`] but writes into a caller-provided buffer.
    pub fn interpolate_into(&self, coord: [f64; 2], out: &mut [f64]) -> Result<()> {
        if !self.contains_coord(coord) {
            return Err(Error::Domain(coord[0], coord[1]));
        }
        if self.width == 1 {
            out.copy_from_slice(self.pixel(1, 1));
            return Ok(());
        }
        let region = Region::containing(self.width, coord);
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = Patch::new(self, c, region).eval(coord[0], coord[1]);
        }
        Ok(())
    }

    /// Deforms the image by a vector field: output pixel `(i, j)` reads the
    /// interpolated input at `(i, j) + τ(i, j)`.
    pub fn deform(&self, field: &VectorField) -> Result<Image> {
        if field.width() != self.width {
            return Err(Error::Argument(format!(
                "vector field width {} does not match image width {}",
                field.width(),
                self.width
            )));
        }
        let mut data = vec![0.0; self.data.len()];
        for i in 1..=self.width {
            for j in 1..=self.width {
                let d = field.get(i, j);
                let coord = [i as f64 + d[0], j as f64 + d[1]];
                let o = self.offset(i, j);
                self.interpolate_into(coord, &mut data[o..o + self.channels])?;
            }
        }
        Ok(Image {
            width: self.width,
            channels: self.channels,
            data,
        })
    }
}

/// Free-function form of [`Image::interpolate`].
pub fn interpolate(image: &Image, coord: [f64; 2]) -> Result<Vec<f64>> {
    image.interpolate(coord)
}

/// Free-function form of [`Image::deform`].
pub fn deform(image: &Image, field: &VectorField) -> Result<Image> {
    image.deform(field)
}

/// Interpolation region `A_{mn}` identified by its lower grid corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region {
    pub m: usize,
    pub n: usize,
}

impl Region {
    /// Region used to evaluate a coordinate: floor, clamped to `W − 1` so the
    /// far image border belongs to the last cell.
    pub fn containing(width: usize, coord: [f64; 2]) -> Region {
        let last = (width - 1).max(1) as f64;
        let m = coord[0].floor().clamp(1.0, last) as usize;
        let n = coord[1].floor().clamp(1.0, last) as usize;
        Region { m, n }
    }

    pub fn contains(&self, coord: [f64; 2]) -> bool {
        let (m, n) = (self.m as f64, self.n as f64);
        coord[0] >= m && coord[0] <= m + 1.0 && coord[1] >= n && coord[1] <= n + 1.0
    }
}

/// Coefficients of `A + B·v + C·w + D·v·w`, the bilinear interpolant of one
/// channel on region `A_{mn}` in absolute image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCoeffs {
    pub m: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RegionCoeffs {
    pub fn eval(&self, v: f64, w: f64) -> f64 {
        self.a + self.b * v + self.c * w + self.d * v * w
    }
}

/// Expands the interpolant of `channel` on region `(m, n)` into polynomial
/// form.
pub fn bilinear_coeffs(image: &Image, channel: usize, m: usize, n: usize) -> Result<RegionCoeffs> {
    let w = image.width();
    if w < 2 || m < 1 || n < 1 || m > w - 1 || n > w - 1 {
        return Err(Error::Argument(format!(
            "region ({m}, {n}) outside 1..={} for a width-{w} image",
            w.saturating_sub(1)
        )));
    }
    if channel >= image.channels() {
        return Err(Error::Argument(format!(
            "channel {channel} out of range for {} channels",
            image.channels()
        )));
    }
    let p = Patch::new(image, channel, Region { m, n });
    let (mf, nf) = (m as f64, n as f64);
    let a = p.p00 * (1.0 + mf) * (1.0 + nf) - p.p10 * mf * (1.0 + nf) - p.p01 * (1.0 + mf) * nf
        + p.p11 * mf * nf;
    let b = (p.p10 - p.p00) * (1.0 + nf) + (p.p01 - p.p11) * nf;
    let c = (p.p01 - p.p00) * (1.0 + mf) + (p.p10 - p.p11) * mf;
    let d = p.p00 - p.p10 - p.p01 + p.p11;
    Ok(RegionCoeffs { m, n, a, b, c, d })
}

/// The four corner values of one channel on one region. Evaluation uses local
/// cell coordinates, which avoids the cancellation the absolute-coordinate
/// polynomial suffers from on large images.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patch {
    pub region: Region,
    pub p00: f64,
    pub p10: f64,
    pub p01: f64,
    pub p11: f64,
}

impl Patch {
    pub fn new(image: &Image, channel: usize, region: Region) -> Patch {
        let Region { m, n } = region;
        Patch {
            region,
            p00: image.get(m, n, channel),
            p10: image.get(m + 1, n, channel),
            p01: image.get(m, n + 1, channel),
            p11: image.get(m + 1, n + 1, channel),
        }
    }

    #[inline]
    pub fn eval(&self, v: f64, w: f64) -> f64 {
        let s = v - self.region.m as f64;
        let t = w - self.region.n as f64;
        self.p00 * (1.0 - s) * (1.0 - t)
            + self.p10 * s * (1.0 - t)
            + self.p01 * (1.0 - s) * t
            + self.p11 * s * t
    }

    /// Coefficients `[A', B', C', D]` of the interpolant re-expressed in
    /// displacement coordinates `(v − ci, w − cj)` around a center.
    pub fn centered(&self, ci: f64, cj: f64) -> [f64; 4] {
        let s0 = ci - self.region.m as f64;
        let t0 = cj - self.region.n as f64;
        let bs = self.p10 - self.p00;
        let bt = self.p01 - self.p00;
        let d = self.p00 - self.p10 - self.p01 + self.p11;
        [
            self.p00 + bs * s0 + bt * t0 + d * s0 * t0,
            bs + d * t0,
            bt + d * s0,
            d,
        ]
    }
}

/// Per-pixel displacement field `τ`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    width: usize,
    disp: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn zeros(width: usize) -> Self {
        VectorField {
            width,
            disp: vec![[0.0, 0.0]; width * width],
        }
    }

    pub fn constant(width: usize, d: [f64; 2]) -> Self {
        VectorField {
            width,
            disp: vec![d; width * width],
        }
    }

    pub fn from_vec(width: usize, disp: Vec<[f64; 2]>) -> Result<Self> {
        if disp.len() != width * width {
            return Err(Error::Argument(format!(
                "vector field of width {width} needs {} vectors, got {}",
                width * width,
                disp.len()
            )));
        }
        if disp.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite displacement".into()));
        }
        Ok(VectorField { width, disp })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.disp
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        self.disp[(i - 1) * self.width + (j - 1)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, d: [f64; 2]) {
        self.disp[(i - 1) * self.width + (j - 1)] = d;
    }

    /// `‖τ‖_{T_p}`: the largest per-pixel `ℓ_p` displacement.
    pub fn t_norm(&self, norm: Norm) -> f64 {
        self.disp.iter().map(|d| norm.length(*d)).fold(0.0, f64::max)
    }

    /// Largest `ℓ_∞` difference between displacement vectors of 4-neighbors.
    pub fn flow(&self) -> f64 {
        let w = self.width;
        let mut worst: f64 = 0.0;
        for i in 1..=w {
            for j in 1..=w {
                let a = self.get(i, j);
                if i < w {
                    let b = self.get(i + 1, j);
                    worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
                }
                if j < w {
                    let b = self.get(i, j + 1);
                    worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
                }
            }
        }
        worst
    }

    /// Whether every displaced pixel stays in the image square.
    pub fn stays_in_image(&self) -> bool {
        let hi = self.width as f64;
        (1..=self.width).all(|i| {
            (1..=self.width).all(|j| {
                let d = self.get(i, j);
                let (v, w) = (i as f64 + d[0], j as f64 + d[1]);
                (1.0..=hi).contains(&v) && (1.0..=hi).contains(&w)
            })
        })
    }
}

#[derive(Serialize, Deserialize)]
struct VectorFieldJson {
    w: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl Serialize for VectorField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VectorFieldJson {
            w: self.width,
            dx: self.disp.iter().map(|d| d[0]).collect(),
            dy: self.disp.iter().map(|d| d[1]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for VectorField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = VectorFieldJson::deserialize(d)?;
        if raw.dx.len() != raw.dy.len() {
            return Err(serde::de::Error::custom("dx and dy lengths differ"));
        }
        let disp = raw.dx.into_iter().zip(raw.dy).map(|(a, b)| [a, b]).collect();
        VectorField::from_vec(raw.w, disp).map_err(serde::de::Error::custom)
    }
}
