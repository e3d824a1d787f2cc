//! Separable bicubic resampling with the Keys kernel (`a = −0.5`).
//!
//! Output sample `x` (0-based) reads input coordinate `u = (x + 0.5)/scale − 0.5`.
//! When shrinking, the kernel is stretched by `1/scale` so it also acts as an
//! anti-aliasing filter. Weights are renormalized to sum to one and samples
//! beyond the border replicate the edge pixel. Output sizes are
//! `ceil(scale · input)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Sparse interpolation weights: for each output index, (first input index, weights).
struct Contributions {
    taps: usize,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn contributions(in_len: usize, out_len: usize, scale: f64) -> Contributions {
    let shrink = scale < 1.0;
    let width = if shrink { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as usize + 2;
    let mut indices = Vec::with_capacity(out_len * taps);
    let mut weights = Vec::with_capacity(out_len * taps);
    for x in 0..out_len {
        let u = (x as f64 + 0.5) / scale - 0.5;
        let left = (u - width / 2.0).floor() as isize;
        let start = weights.len();
        let mut total = 0.0;
        for t in 0..taps {
            let j = left + t as isize;
            let d = u - j as f64;
            let w = if shrink { scale * cubic(scale * d) } else { cubic(d) };
            total += w;
            weights.push(w);
            indices.push(j.clamp(0, in_len as isize - 1) as usize);
        }
        for w in &mut weights[start..] {
            *w /= total;
        }
    }
    Contributions { taps, indices, weights }
}

fn resize_rows(img: &DMatrix<f64>, out_rows: usize, scale: f64) -> DMatrix<f64> {
    let c = contributions(img.nrows(), out_rows, scale);
    DMatrix::from_fn(out_rows, img.ncols(), |r, col| {
        let base = r * c.taps;
        (0..c.taps).map(|t| c.weights[base + t] * img[(c.indices[base + t], col)]).sum()
    })
}

fn resize_cols(img: &DMatrix<f64>, out_cols: usize, scale: f64) -> DMatrix<f64> {
    let c = contributions(img.ncols(), out_cols, scale);
    DMatrix::from_fn(img.nrows(), out_cols, |r, col| {
        let base = col * c.taps;
        (0..c.taps).map(|t| c.weights[base + t] * img[(r, c.indices[base + t])]).sum()
    })
}

/// Resizes both axes by `scale`.
pub fn bicubic_resize(img: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::arg(format!("resize factor must be positive, got {scale}")));
    }
    let out_rows = (img.nrows() as f64 * scale - 1e-9).ceil() as usize;
    let out_cols = (img.ncols() as f64 * scale - 1e-9).ceil() as usize;
    if out_rows == 0 || out_cols == 0 || img.is_empty() {
        return Err(Error::dim(format!("resizing {}x{} by {scale} leaves no pixels", img.nrows(), img.ncols())));
    }
    Ok(resize_cols(&resize_rows(img, out_rows, scale), out_cols, scale))
}
