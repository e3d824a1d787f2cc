//! Signal-subspace estimation and the projections that define the atom feasible set.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, pinv, sorted_eigen, PINV_CUTOFF};
use crate::structured::Geometry;

/// Fraction of squared singular-value mass the signal subspace must capture.
pub const DEFAULT_SUBSPACE_ENERGY: f64 = 0.9999;

/// Subspace estimation looks at no more than this many columns.
pub const MAX_SUBSPACE_COLUMNS: usize = 50_000;

/// Relative eigenvalue level (of the Gram matrix) treated as exactly zero.
pub const NULL_SPACE_TOLERANCE: f64 = 1e-12;

/// Orthonormal bases of a data subspace and of its orthogonal complement.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// `W`, one basis vector per column.
    pub signal: DMatrix<f64>,
    /// `U`, the complement of `signal`.
    pub complement: DMatrix<f64>,
    /// Squared singular values of the data, decreasing.
    pub spectrum: DVector<f64>,
}

impl SubspaceBasis {
    pub fn rank(&self) -> usize {
        self.signal.ncols()
    }

    pub fn dim(&self) -> usize {
        self.signal.nrows()
    }

    /// Keeps only the leading `k` signal directions, moving the rest to the complement.
    pub fn truncate(&self, k: usize) -> SubspaceBasis {
        let k = k.min(self.rank());
        if k == self.rank() {
            return self.clone();
        }
        let l = self.dim();
        let moved = self.signal.columns(k, self.rank() - k);
        let mut complement = DMatrix::zeros(l, l - k);
        complement.columns_mut(0, moved.ncols()).copy_from(&moved);
        complement.columns_mut(moved.ncols(), self.complement.ncols()).copy_from(&self.complement);
        SubspaceBasis { signal: self.signal.columns(0, k).into_owned(), complement, spectrum: self.spectrum.clone() }
    }
}

/// Estimates the signal subspace of `data` (one sample per column).
///
/// `K` is the smallest number of leading singular directions whose squared
/// singular values reach `energy` of the total.
pub fn signal_subspace(data: &DMatrix<f64>, energy: f64) -> Result<SubspaceBasis> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::arg(format!("subspace energy must lie in (0, 1], got {energy}")));
    }
    if data.ncols() == 0 || data.nrows() == 0 {
        return Err(Error::dim("subspace estimation needs a nonempty data matrix"));
    }
    let l = data.nrows();
    let (values, vectors) = sorted_eigen(data * data.transpose());
    let spectrum = values.map(|v| v.max(0.0));
    let total: f64 = spectrum.sum();
    if !(total > 0.0) {
        return Err(Error::numerical("data matrix is zero; no signal subspace"));
    }
    let target = energy * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut k = l;
    for (i, v) in spectrum.iter().enumerate() {
        acc += v;
        if acc >= target {
            k = i + 1;
            break;
        }
    }
    Ok(SubspaceBasis {
        signal: vectors.columns(0, k).into_owned(),
        complement: vectors.columns(k, l - k).into_owned(),
        spectrum,
    })
}

/// Orthonormal basis of the numerical null space of `data`'s column span.
pub fn null_space(data: &DMatrix<f64>) -> DMatrix<f64> {
    let l = data.nrows();
    if data.ncols() == 0 {
        return DMatrix::identity(l, l);
    }
    let (values, vectors) = sorted_eigen(data * data.transpose());
    let top = values.max().max(0.0);
    let rank = values.iter().filter(|&&v| v > NULL_SPACE_TOLERANCE * top).count();
    if top == 0.0 {
        return DMatrix::identity(l, l);
    }
    vectors.columns(rank, l - rank).into_owned()
}

/// Uniformly samples at most `max_cols` distinct columns, keeping their order.
pub fn subsample_columns<R: Rng + ?Sized>(data: &DMatrix<f64>, max_cols: usize, rng: &mut R) -> DMatrix<f64> {
    let n = data.ncols();
    if n <= max_cols {
        return data.clone();
    }
    let mut picked = index::sample(rng, n, max_cols).into_vec();
    picked.sort_unstable();
    data.select_columns(picked.iter())
}

/// `P_S = I − U Uᵀ`, the projector onto the complement of `U`'s span.
pub fn complement_projector(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = u.nrows();
    if u.ncols() == 0 {
        return Ok(DMatrix::identity(l, l));
    }
    let err = orthonormality_error(u);
    if err > 1e-8 {
        return Err(Error::arg(format!("complement basis is not orthonormal (error {err:.2e})")));
    }
    Ok(DMatrix::identity(l, l) - u * u.transpose())
}

/// Folds `P_S` onto atom space: `P ω` is the generator of the Toeplitz matrix
/// nearest to `T(ω, l) P_S`, obtained by averaging each generator diagonal.
///
/// Every one of the `n` generator diagonals holds exactly one entry per filter
/// placement, so each is averaged over `geometry.positions()` entries.
pub fn averaged_projector(complement_projector: &DMatrix<f64>, geometry: &Geometry) -> Result<DMatrix<f64>> {
    let l = geometry.signal_len();
    if complement_projector.shape() != (l, l) {
        return Err(Error::dim(format!(
            "projector is {}x{}, geometry needs {l}x{l}",
            complement_projector.nrows(),
            complement_projector.ncols()
        )));
    }
    let n = geometry.atom_len();
    let positions = geometry.positions();
    let table = geometry.tap_table();
    let mut p = DMatrix::zeros(n, n);
    for pos in 0..positions {
        let idx = &table[pos * n..(pos + 1) * n];
        for k in 0..n {
            for j in 0..n {
                p[(j, k)] += complement_projector[(idx[k], idx[j])];
            }
        }
    }
    p /= positions as f64;
    Ok(p)
}

/// One-dimensional convenience for [`averaged_projector`].
pub fn averaged_projector_line(complement_projector: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let l = complement_projector.nrows();
    if n == 0 || l < n {
        return Err(Error::dim(format!("atom length {n} does not fit signal length {l}")));
    }
    averaged_projector(complement_projector, &Geometry::line(l, n)?)
}

/// The projection pair that shapes atom updates.
#[derive(Debug, Clone)]
pub struct Projectors {
    /// `P_S`, l×l.
    pub complement: DMatrix<f64>,
    /// `P`, n×n.
    pub averaged: DMatrix<f64>,
}

impl Projectors {
    pub fn new(basis: &SubspaceBasis, geometry: &Geometry) -> Result<Self> {
        let complement = complement_projector(&basis.complement)?;
        let averaged = averaged_projector(&complement, geometry)?;
        Ok(Self { complement, averaged })
    }
}

/// `P_ω = P (I − Q_ω† Q_ω)` with `Q_ω = [2ω, V]ᵀ`.
#[derive(Debug, Clone)]
pub struct TangentProjector<'a> {
    q: DMatrix<f64>,
    q_pinv: DMatrix<f64>,
    averaged: &'a DMatrix<f64>,
}

impl<'a> TangentProjector<'a> {
    pub fn new(atom: &[f64], null_basis: &DMatrix<f64>, averaged: &'a DMatrix<f64>) -> Result<Self> {
        let n = atom.len();
        let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::arg("tangent space of a zero atom is undefined"));
        }
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::arg(format!("atom must have unit norm, has {norm}")));
        }
        if averaged.shape() != (n, n) || (null_basis.ncols() > 0 && null_basis.nrows() != n) {
            return Err(Error::dim("projector dimensions do not match atom length"));
        }
        let r = null_basis.ncols();
        let mut q = DMatrix::zeros(1 + r, n);
        for (j, &a) in atom.iter().enumerate() {
            q[(0, j)] = 2.0 * a;
        }
        for c in 0..r {
            for j in 0..n {
                q[(1 + c, j)] = null_basis[(j, c)];
            }
        }
        let q_pinv = pinv(&q, PINV_CUTOFF);
        Ok(Self { q, q_pinv, averaged })
    }

    /// `(I − Q†Q) g`, the component of `g` tangent to the sphere and orthogonal to `V`.
    pub fn tangent_part(&self, g: &DVector<f64>) -> DVector<f64> {
        g - &self.q_pinv * (&self.q * g)
    }

    /// `P_ω g`.
    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        self.averaged * self.tangent_part(g)
    }

    /// `(I − Q†Q) P (I − Q†Q) g`, a symmetric positive semidefinite map of `g`
    /// whose output is tangent and `V`-orthogonal.
    pub fn symmetric_apply(&self, g: &DVector<f64>) -> DVector<f64> {
        self.tangent_part(&self.apply(g))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.q.ncols();
        self.averaged * (DMatrix::identity(n, n) - &self.q_pinv * &self.q)
    }
}
