use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `10 log10(255² / MSE)` over the pixels at least `border` away from every edge.
///
/// Identical regions give `f64::INFINITY`.
pub fn psnr(reference: &DMatrix<f64>, test: &DMatrix<f64>, border: usize) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::dim(format!(
            "cannot compare {}x{} with {}x{}",
            reference.nrows(),
            reference.ncols(),
            test.nrows(),
            test.ncols()
        )));
    }
    let (rows, cols) = reference.shape();
    if rows <= 2 * border || cols <= 2 * border {
        return Err(Error::dim(format!("border {border} leaves nothing of a {rows}x{cols} image")));
    }
    let mut sse = 0.0;
    for c in border..cols - border {
        for r in border..rows - border {
            let d = reference[(r, c)] - test[(r, c)];
            sse += d * d;
        }
    }
    let mse = sse / ((rows - 2 * border) * (cols - 2 * border)) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_mse() {
        let a = DMatrix::from_element(4, 4, 10.0);
        let b = DMatrix::from_fn(4, 4, |r, c| if (r + c) % 2 == 0 { 11.0 } else { 9.0 });
        assert!((psnr(&a, &b, 0).unwrap() - 48.130_803_6).abs() < 1e-6);
        assert!((psnr(&a, &b, 1).unwrap() - 48.130_803_6).abs() < 1e-6);
    }

    #[test]
    fn identical_is_infinite_and_symmetric() {
        let a = DMatrix::from_fn(5, 6, |r, c| (r * c) as f64);
        assert_eq!(psnr(&a, &a, 1).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 3.0 * (v % 2.0));
        assert_eq!(psnr(&a, &b, 1).unwrap(), psnr(&b, &a, 1).unwrap());
        let shift = |m: &DMatrix<f64>| m.map(|v| v + 7.0);
        assert!((psnr(&shift(&a), &shift(&b), 1).unwrap() - psnr(&a, &b, 1).unwrap()).abs() < 1e-12);
        assert!(psnr(&a, &DMatrix::zeros(5, 5), 0).is_err());
    }
}
