//! Browser bindings: interval bounds, sampled deformations and per-pixel
//! candidate points for a single-image demo.
//!
//! Images cross the boundary as flat row-major `Float64Array`s with
//! channels innermost.

use deformcert::geometry::candidate_set;
use deformcert::oracle::{sample_indexed, SamplerConfig};
use deformcert::{parse_gamma, AttackBudget, Image, Norm};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn budget(norm: &str, delta: f64, gamma: &str) -> Result<AttackBudget, JsError> {
    let norm: Norm = norm.parse().map_err(js)?;
    AttackBudget::new(norm, delta, parse_gamma(gamma).map_err(js)?).map_err(js)
}

fn image(pixels: &[f64], width: usize, channels: usize) -> Result<Image, JsError> {
    Image::new(width, channels, pixels.to_vec()).map_err(js)
}

/// Interval bounds of every pixel: the lower bounds followed by the upper
/// bounds, each in the image layout.
#[wasm_bindgen]
pub fn bounds_map(pixels: &[f64], width: usize, channels: usize, norm: &str, delta: f64) -> Result<Vec<f64>, JsError> {
    let image = image(pixels, width, channels)?;
    let bounds = deformcert::bounds_map(&image, &budget(norm, delta, "inf")?);
    Ok([bounds.lower(), bounds.upper()].concat())
}

/// Sample `index` of the seeded sampler, applied to the image. Returns the
/// deformed pixels.
#[wasm_bindgen]
pub fn sample_deformation(
    pixels: &[f64],
    width: usize,
    channels: usize,
    norm: &str,
    delta: f64,
    gamma: &str,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>, JsError> {
    let image = image(pixels, width, channels)?;
    let config = SamplerConfig::new(budget(norm, delta, gamma)?, 1, seed).map_err(js)?;
    let field = sample_indexed(width, &config, index);
    Ok(image.deform(&field).map_err(js)?.data().to_vec())
}

/// Candidate coordinates of pixel `(i, j)` (1-based) as `[x0, y0, x1, y1, …]`.
#[wasm_bindgen]
pub fn pixel_candidates(
    pixels: &[f64],
    width: usize,
    channels: usize,
    norm: &str,
    delta: f64,
    i: usize,
    j: usize,
) -> Result<Vec<f64>, JsError> {
    let image = image(pixels, width, channels)?;
    if !image.contains_pixel(i, j) {
        return Err(JsError::new(&format!("pixel ({i}, {j}) outside a width-{width} image")));
    }
    let set = candidate_set(&image, i, j, &budget(norm, delta, "inf")?);
    Ok(set.unique_coords().into_iter().flatten().collect())
}
