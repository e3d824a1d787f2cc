//! Small dense linear-algebra helpers shared by the learners.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used for pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Ridge weight relative to the Gram trace when normal equations are singular.
pub const RIDGE_FACTOR: f64 = 1e-8;

/// Moore-Penrose pseudo-inverse; singular values below `rel_cutoff * sigma_max` are dropped.
pub fn pinv(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(cols, rows);
    if smax <= 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_cutoff * smax {
            // out += v_k u_k^T / s
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    out
}

/// `log det(a)` for a symmetric positive definite matrix, `None` when the
/// Cholesky factorization breaks down.
pub fn log_det_spd(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Symmetric eigendecomposition with eigenpairs sorted by decreasing eigenvalue.
pub fn sorted_eigen(sym: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `max |AᵀA − I|`, the deviation of the columns of `a` from orthonormality.
pub fn orthonormality_error(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Outcome of a least-squares regression `targets ≈ G · features`.
#[derive(Debug, Clone)]
pub struct Regression {
    pub coefficients: DMatrix<f64>,
    /// Whether the Gram matrix needed the ridge fallback.
    pub ridged: bool,
}

/// Solves `G = Y Xᵀ (X Xᵀ)⁻¹` for `Y` (t×N) and `X` (f×N).
///
/// Falls back to `(X Xᵀ + ε I)` with `ε = 1e-8 · trace(X Xᵀ)` when the Gram
/// matrix is numerically singular; an all-zero Gram yields `G = 0`.
pub fn least_squares(targets: &DMatrix<f64>, features: &DMatrix<f64>) -> Regression {
    assert_eq!(targets.ncols(), features.ncols(), "sample counts differ");
    let gram = features * features.transpose();
    let cross = targets * features.transpose();
    solve_gram(&gram, &cross)
}

/// Solves `G · gram = cross` for symmetric PSD `gram`, with the ridge fallback.
pub fn solve_gram(gram: &DMatrix<f64>, cross: &DMatrix<f64>) -> Regression {
    let f = gram.nrows();
    if f == 0 {
        return Regression { coefficients: DMatrix::zeros(cross.nrows(), 0), ridged: false };
    }
    if let Some(chol) = well_conditioned_cholesky(gram) {
        let g_t = chol.solve(&cross.transpose());
        return Regression { coefficients: g_t.transpose(), ridged: false };
    }
    let trace = gram.trace();
    if !(trace > 0.0) {
        return Regression { coefficients: DMatrix::zeros(cross.nrows(), f), ridged: true };
    }
    let mut reg = gram.clone();
    for i in 0..f {
        reg[(i, i)] += RIDGE_FACTOR * trace;
    }
    let coefficients = match reg.clone().cholesky() {
        Some(chol) => chol.solve(&cross.transpose()).transpose(),
        None => cross * pinv(&reg, PINV_CUTOFF),
    };
    Regression { coefficients, ridged: true }
}

fn well_conditioned_cholesky(gram: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = gram.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..gram.nrows() {
        let d = l[(i, i)] * l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 0.0) || lo < 1e-14 * hi {
        return None;
    }
    Some(chol)
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let p = pinv(&a, PINV_CUTOFF);
        let back = &a * &p * &a;
        assert!((back - a).abs().max() < 1e-12);
    }

    #[test]
    fn log_det_matches_product() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        assert!((log_det_spd(&a).unwrap() - 11f64.ln()).abs() < 1e-14);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(log_det_spd(&singular).is_none());
    }

    #[test]
    fn zero_gram_gives_zero_regression() {
        let y = DMatrix::from_element(2, 5, 1.0);
        let x = DMatrix::zeros(3, 5);
        let r = least_squares(&y, &x);
        assert!(r.ridged);
        assert_eq!(max_abs(&r.coefficients), 0.0);
    }
}
