//! Structured operators that realize convolution as matrix action.
//!
//! All convolutions here are *valid-mode cross-correlations*: the filter is
//! not flipped and no padding is applied, so a filter with `n` taps applied to
//! a signal of length `l` produces `l − n + 1` outputs and
//!
//! ```text
//! out[i] = Σ_j ω[j] · x[i + j]
//! ```
//!
//! which is the Toeplitz matrix with `ω[j]` on the `j`-th upper diagonal.
//! Two-dimensional, multi-channel signals use the same conventions through a
//! [`Geometry`]: a signal of `rows × cols × channels` and a filter of
//! `frows × fcols × channels`, whose matrix form is doubly-block Toeplitz.
//!
//! Vectorization is column-stacking everywhere (first index fastest). A
//! signal entry `(r, c, ch)` lives at `r + rows·(c + cols·ch)`, a filter tap
//! `(i, j, ch)` at `i + frows·(j + fcols·ch)`, and an output position `(a, b)`
//! at `a + out_rows·b`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Explicit materialization refuses matrices with more entries than this.
pub const MATERIALIZE_LIMIT: usize = 1_000_000;

/// A convolution filter: its taps plus the spatial shape they are laid out in.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterAtom {
    coeffs: Vec<f64>,
    rows: usize,
    cols: usize,
    channels: usize,
}

impl FilterAtom {
    pub fn new(coeffs: Vec<f64>, rows: usize, cols: usize, channels: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::dim("filter extents must be positive"));
        }
        if coeffs.len() != rows * cols * channels {
            return Err(Error::dim(format!(
                "filter of {rows}x{cols}x{channels} needs {} taps, got {}",
                rows * cols * channels,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::arg("filter taps must be finite"));
        }
        Ok(Self { coeffs, rows, cols, channels })
    }

    /// A one-dimensional filter of `coeffs.len()` taps.
    pub fn line(coeffs: Vec<f64>) -> Result<Self> {
        let n = coeffs.len();
        Self::new(coeffs, n, 1, 1)
    }

    /// A `side × side × channels` filter.
    pub fn square(coeffs: Vec<f64>, side: usize, channels: usize) -> Result<Self> {
        Self::new(coeffs, side, side, channels)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Shape bookkeeping for a filter sliding over a signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    rows: usize,
    cols: usize,
    channels: usize,
    frows: usize,
    fcols: usize,
}

impl Geometry {
    pub fn new(rows: usize, cols: usize, channels: usize, frows: usize, fcols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 || frows == 0 || fcols == 0 {
            return Err(Error::dim("geometry extents must be positive"));
        }
        if frows > rows || fcols > cols {
            return Err(Error::dim(format!("filter {frows}x{fcols} does not fit in signal {rows}x{cols}")));
        }
        Ok(Self { rows, cols, channels, frows, fcols })
    }

    /// A length-`l` signal seen by an `n`-tap filter.
    pub fn line(signal_len: usize, atom_len: usize) -> Result<Self> {
        Self::new(signal_len, 1, 1, atom_len, 1)
    }

    /// A `side × side × channels` patch seen by a `filter_side` square filter.
    pub fn square(side: usize, channels: usize, filter_side: usize) -> Result<Self> {
        Self::new(side, side, channels, filter_side, filter_side)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn filter_rows(&self) -> usize {
        self.frows
    }

    pub fn filter_cols(&self) -> usize {
        self.fcols
    }

    pub fn out_rows(&self) -> usize {
        self.rows - self.frows + 1
    }

    pub fn out_cols(&self) -> usize {
        self.cols - self.fcols + 1
    }

    /// Number of valid filter placements, `p` in the 1-D case.
    pub fn positions(&self) -> usize {
        self.out_rows() * self.out_cols()
    }

    /// Filter length `n`.
    pub fn atom_len(&self) -> usize {
        self.frows * self.fcols * self.channels
    }

    /// Signal length `l`.
    pub fn signal_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    /// Index into the signal read by `tap` when the filter sits at `position`.
    #[inline]
    pub fn tap_index(&self, position: usize, tap: usize) -> usize {
        let orows = self.out_rows();
        let (a, b) = (position % orows, position / orows);
        let i = tap % self.frows;
        let rest = tap / self.frows;
        let (j, ch) = (rest % self.fcols, rest / self.fcols);
        (a + i) + self.rows * ((b + j) + self.cols * ch)
    }

    /// Every `(position, tap)` signal index, position-major.
    pub fn tap_table(&self) -> Vec<usize> {
        let n = self.atom_len();
        let mut table = Vec::with_capacity(self.positions() * n);
        for pos in 0..self.positions() {
            for tap in 0..n {
                table.push(self.tap_index(pos, tap));
            }
        }
        table
    }

    fn check_signal(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.signal_len() {
            return Err(Error::dim(format!(
                "signal length {} does not match geometry length {}",
                x.len(),
                self.signal_len()
            )));
        }
        Ok(())
    }

    fn check_atom(&self, atom: &[f64]) -> Result<()> {
        if atom.len() != self.atom_len() {
            return Err(Error::dim(format!(
                "atom length {} does not match geometry atom length {}",
                atom.len(),
                self.atom_len()
            )));
        }
        Ok(())
    }
}

/// `T(ω, l)`: the Toeplitz (or doubly-block Toeplitz) matrix of one atom.
#[derive(Debug, Clone)]
pub struct ToeplitzOperator {
    atom: FilterAtom,
    geometry: Geometry,
}

impl ToeplitzOperator {
    /// One-dimensional operator for a length-`signal_len` signal.
    pub fn new(atom: FilterAtom, signal_len: usize) -> Result<Self> {
        if signal_len < atom.len() {
            return Err(Error::dim(format!("signal length {signal_len} is shorter than the filter ({})", atom.len())));
        }
        let geometry = Geometry::line(signal_len, atom.len())?;
        Ok(Self { atom, geometry })
    }

    pub fn with_geometry(atom: FilterAtom, geometry: Geometry) -> Result<Self> {
        geometry.check_atom(atom.coeffs())?;
        Ok(Self { atom, geometry })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// `T x`, accumulated one shifted copy of `x` per tap.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.geometry.check_signal(x)?;
        Ok(toeplitz_kernel(self.atom.coeffs(), x, &self.geometry))
    }

    /// Dense `p × l` matrix. Only intended for tests and small inspections.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let g = &self.geometry;
        check_materialize(g.positions(), g.signal_len())?;
        let mut m = DMatrix::zeros(g.positions(), g.signal_len());
        for pos in 0..g.positions() {
            for (tap, &w) in self.atom.coeffs().iter().enumerate() {
                m[(pos, g.tap_index(pos, tap))] += w;
            }
        }
        Ok(m)
    }
}

fn check_materialize(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > MATERIALIZE_LIMIT {
        return Err(Error::arg(format!(
            "refusing to materialize a {rows}x{cols} matrix (limit {MATERIALIZE_LIMIT} entries)"
        )));
    }
    Ok(())
}

fn toeplitz_kernel(atom: &[f64], x: &[f64], g: &Geometry) -> Vec<f64> {
    let (orows, ocols) = (g.out_rows(), g.out_cols());
    let mut out = vec![0.0; orows * ocols];
    for (tap, &w) in atom.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let i = tap % g.frows;
        let rest = tap / g.frows;
        let (j, ch) = (rest % g.fcols, rest / g.fcols);
        for b in 0..ocols {
            let src = &x[i + g.rows * ((b + j) + g.cols * ch)..][..orows];
            let dst = &mut out[orows * b..][..orows];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// `R(x, n)`: the right dual of a signal, one row per filter placement.
///
/// Row `i` holds the window of `x` seen at placement `i`, so that
/// `R(x, n) ω = T(ω, l) x` for every atom `ω`.
#[derive(Debug, Clone)]
pub struct RightDual {
    matrix: DMatrix<f64>,
}

impl RightDual {
    /// One-dimensional right dual with window length `n`.
    pub fn new(x: &[f64], n: usize) -> Result<Self> {
        if n == 0 || x.len() < n {
            return Err(Error::dim(format!("window {n} does not fit in signal of length {}", x.len())));
        }
        Self::with_geometry(x, &Geometry::line(x.len(), n)?)
    }

    pub fn with_geometry(x: &[f64], geometry: &Geometry) -> Result<Self> {
        geometry.check_signal(x)?;
        let (p, n) = (geometry.positions(), geometry.atom_len());
        let mut matrix = DMatrix::zeros(p, n);
        for pos in 0..p {
            for tap in 0..n {
                matrix[(pos, tap)] = x[geometry.tap_index(pos, tap)];
            }
        }
        Ok(Self { matrix })
    }

    /// Builds the right dual from a precomputed [`Geometry::tap_table`].
    pub fn from_table(x: &[f64], table: &[usize], positions: usize, atom_len: usize) -> Self {
        let matrix = DMatrix::from_fn(positions, atom_len, |pos, tap| x[table[pos * atom_len + tap]]);
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn apply(&self, atom: &[f64]) -> Result<Vec<f64>> {
        if atom.len() != self.matrix.ncols() {
            return Err(Error::dim("atom length does not match right-dual width"));
        }
        let w = nalgebra::DVectorView::from_slice(atom, atom.len());
        Ok((&self.matrix * w).as_slice().to_vec())
    }
}

/// `T(ω, l) x` for a one-dimensional atom.
pub fn toeplitz_apply(atom: &FilterAtom, x: &[f64]) -> Result<Vec<f64>> {
    ToeplitzOperator::new(atom.clone(), x.len())?.apply(x)
}

/// `R(x, n) ω`; equal to [`toeplitz_apply`] through the windowed-row route.
pub fn right_dual_apply(x: &[f64], atom: &FilterAtom) -> Result<Vec<f64>> {
    RightDual::new(x, atom.len())?.apply(atom.coeffs())
}

/// `H(Ω, l)`: the vertical stack of the Toeplitz operators of every row of `Ω`.
#[derive(Debug, Clone)]
pub struct ConvAnalysisDictionary {
    base: DMatrix<f64>,
    geometry: Geometry,
}

impl ConvAnalysisDictionary {
    pub fn new(base: DMatrix<f64>, geometry: Geometry) -> Result<Self> {
        if base.ncols() != geometry.atom_len() {
            return Err(Error::dim(format!(
                "dictionary atoms have length {}, geometry expects {}",
                base.ncols(),
                geometry.atom_len()
            )));
        }
        Ok(Self { base, geometry })
    }

    /// One-dimensional dictionary over length-`signal_len` signals.
    pub fn line(base: DMatrix<f64>, signal_len: usize) -> Result<Self> {
        let n = base.ncols();
        if signal_len < n {
            return Err(Error::dim("signal shorter than atoms"));
        }
        Self::new(base, Geometry::line(signal_len, n)?)
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Total rows `q = p · m`.
    pub fn rows(&self) -> usize {
        self.geometry.positions() * self.base.nrows()
    }

    /// `H x = vec(R(x, n) Ωᵀ)`, block `k` holding the responses of atom `k`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = RightDual::with_geometry(x, &self.geometry)?;
        Ok((r.matrix() * self.base.transpose()).as_slice().to_vec())
    }

    /// `H x` computed block by block through the Toeplitz route.
    pub fn apply_blockwise(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.geometry.check_signal(x)?;
        let mut out = Vec::with_capacity(self.rows());
        for row in self.base.row_iter() {
            let atom: Vec<f64> = row.iter().copied().collect();
            out.extend(toeplitz_kernel(&atom, x, &self.geometry));
        }
        Ok(out)
    }

    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let (p, l) = (self.geometry.positions(), self.geometry.signal_len());
        check_materialize(self.rows(), l)?;
        let mut m = DMatrix::zeros(self.rows(), l);
        for (k, row) in self.base.row_iter().enumerate() {
            let atom = FilterAtom::new(
                row.iter().copied().collect(),
                self.geometry.frows,
                self.geometry.fcols,
                self.geometry.channels,
            )?;
            let block = ToeplitzOperator::with_geometry(atom, self.geometry.clone())?.materialize()?;
            m.view_mut((k * p, 0), (p, l)).copy_from(&block);
        }
        Ok(m)
    }
}

/// A `rows × cols × channels` array, stored column-major with each channel
/// plane contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::dim("tensor extents must be positive"));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::dim(format!(
                "{rows}x{cols}x{channels} tensor needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("tensor entries must be finite"));
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels, data: vec![0.0; rows * cols * channels] }
    }

    /// Single-channel tensor from a matrix (rows × cols).
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.nrows(), m.ncols(), 1, m.as_slice().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[r + self.rows * (c + self.cols * ch)]
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let plane = self.rows * self.cols;
        &self.data[ch * plane..(ch + 1) * plane]
    }

    pub fn channel_matrix(&self, ch: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, self.channel(ch))
    }

    /// Stacks equally sized single-plane matrices as channels.
    pub fn from_planes(planes: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::dim("no planes"))?;
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(rows * cols * planes.len());
        for p in &planes {
            if p.shape() != (rows, cols) {
                return Err(Error::dim("planes differ in shape"));
            }
            data.extend_from_slice(p.as_slice());
        }
        Self::new(rows, cols, planes.len(), data)
    }
}

/// Valid-mode 2-D cross-correlation of a multi-channel filter with a tensor.
pub fn conv2d_valid(filter: &FilterAtom, x: &FeatureTensor) -> Result<DMatrix<f64>> {
    if filter.channels() != x.channels() {
        return Err(Error::dim(format!("filter has {} channels, input has {}", filter.channels(), x.channels())));
    }
    let g = Geometry::new(x.rows(), x.cols(), x.channels(), filter.rows(), filter.cols())?;
    let out = toeplitz_kernel(filter.coeffs(), x.data(), &g);
    Ok(DMatrix::from_vec(g.out_rows(), g.out_cols(), out))
}

/// Correlates every row of `bank` (each a `side × side × channels` filter)
/// with `x`; output channel `k` belongs to row `k`.
pub fn conv_bank_valid(bank: &DMatrix<f64>, side: usize, x: &FeatureTensor) -> Result<FeatureTensor> {
    let g = Geometry::new(x.rows(), x.cols(), x.channels(), side, side)?;
    if bank.ncols() != g.atom_len() {
        return Err(Error::dim(format!(
            "bank atoms have length {}, {side}x{side}x{} filters need {}",
            bank.ncols(),
            x.channels(),
            g.atom_len()
        )));
    }
    let plane = g.positions();
    let mut data = Vec::with_capacity(plane * bank.nrows());
    let mut atom = vec![0.0; bank.ncols()];
    for k in 0..bank.nrows() {
        for (t, a) in atom.iter_mut().enumerate() {
            *a = bank[(k, t)];
        }
        data.extend(toeplitz_kernel(&atom, x.data(), &g));
    }
    FeatureTensor::new(g.out_rows(), g.out_cols(), bank.nrows(), data)
}

#[inline]
pub(crate) fn shrink(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// `sign(v) · max(|v| − λ, 0)`.
pub fn soft_threshold(v: f64, lambda: f64) -> Result<f64> {
    check_threshold(lambda)?;
    Ok(shrink(v, lambda))
}

pub fn soft_threshold_in_place(values: &mut [f64], lambda: f64) -> Result<()> {
    check_threshold(lambda)?;
    values.iter_mut().for_each(|v| *v = shrink(*v, lambda));
    Ok(())
}

/// Thresholds channel `k` of `x` with `lambdas[k]` (the `λ ⊗ 1` broadcast).
pub fn threshold_channels(x: &mut FeatureTensor, lambdas: &[f64]) -> Result<()> {
    if lambdas.len() != x.channels() {
        return Err(Error::dim(format!("{} thresholds for {} channels", lambdas.len(), x.channels())));
    }
    let plane = x.rows() * x.cols();
    for (k, &lambda) in lambdas.iter().enumerate() {
        soft_threshold_in_place(&mut x.data_mut()[k * plane..(k + 1) * plane], lambda)?;
    }
    Ok(())
}

fn check_threshold(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::arg(format!("threshold must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Column-stacking vectorization.
pub fn vec(a: &DMatrix<f64>) -> Vec<f64> {
    a.as_slice().to_vec()
}

/// Inverse of [`vec()`].
pub fn mat(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if rows * cols != v.len() {
        return Err(Error::dim(format!("cannot reshape {} values into {rows}x{cols}", v.len())));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn identity_filter_returns_signal() {
        let x = vec![3.0, -1.0, 2.5, 0.0, 7.0];
        let out = toeplitz_apply(&FilterAtom::line(vec![1.0]).unwrap(), &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn short_signal_is_rejected() {
        let atom = FilterAtom::line(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(toeplitz_apply(&atom, &[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(matches!(right_dual_apply(&[1.0, 2.0], &atom), Err(Error::Dimension(_))));
    }

    #[test]
    fn stacked_dictionary_shape() {
        let base = DMatrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        let h = ConvAnalysisDictionary::line(base, 12).unwrap();
        let m = h.materialize().unwrap();
        assert_eq!(m.shape(), (32, 12));
        // each block is 8×12 with ω(j) on the j-th upper diagonal
        for k in 0..4 {
            for i in 0..8 {
                for j in 0..5 {
                    assert_eq!(m[(k * 8 + i, i + j)], (k * 5 + j) as f64);
                }
            }
        }
    }

    #[test]
    fn toeplitz_matches_materialized_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let atom = FilterAtom::line(random_vec(&mut rng, 5)).unwrap();
        let x = random_vec(&mut rng, 12);
        let op = ToeplitzOperator::new(atom, 12).unwrap();
        let m = op.materialize().unwrap();
        assert_eq!(m.shape(), (8, 12));
        let dense = &m * nalgebra::DVector::from_vec(x.clone());
        assert!(max_diff(&op.apply(&x).unwrap(), dense.as_slice()) < 1e-12);
    }

    #[test]
    fn right_dual_edge_cases() {
        let atom = FilterAtom::line(vec![0.5, -2.0, 4.0]).unwrap();
        let x = [1.0, 2.0, 3.0];
        let out = right_dual_apply(&x, &atom).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - (0.5 - 4.0 + 12.0)).abs() < 1e-15);

        let impulse = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(right_dual_apply(&impulse, &atom).unwrap(), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn right_dual_matches_toeplitz_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let atom = FilterAtom::line(random_vec(&mut rng, 7)).unwrap();
        let x = random_vec(&mut rng, 20);
        let a = toeplitz_apply(&atom, &x).unwrap();
        let b = right_dual_apply(&x, &atom).unwrap();
        assert!(max_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn right_dual_rows_are_windows() {
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        let r = RightDual::new(&x, 3).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(r.matrix()[(i, j)], (i + j) as f64);
            }
        }
    }

    #[test]
    fn conv2d_identity_and_hand_sum() {
        let x = FeatureTensor::new(3, 4, 1, (0..12).map(f64::from).collect()).unwrap();
        let id = FilterAtom::square(vec![1.0], 1, 1).unwrap();
        let out = conv2d_valid(&id, &x).unwrap();
        assert_eq!(out.as_slice(), x.data());

        // [[1,2],[3,4]] stored column-major
        let small = FeatureTensor::new(2, 2, 1, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let ones = FilterAtom::square(vec![1.0; 4], 2, 1).unwrap();
        let out = conv2d_valid(&ones, &small).unwrap();
        assert_eq!(out.shape(), (1, 1));
        assert_eq!(out[(0, 0)], 10.0);
    }

    #[test]
    fn conv2d_matches_doubly_block_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = FeatureTensor::new(6, 6, 1, random_vec(&mut rng, 36)).unwrap();
        let filter = FilterAtom::square(random_vec(&mut rng, 9), 3, 1).unwrap();
        let out = conv2d_valid(&filter, &x).unwrap();
        assert_eq!(out.shape(), (4, 4));
        let op = ToeplitzOperator::with_geometry(filter.clone(), Geometry::square(6, 1, 3).unwrap()).unwrap();
        let m = op.materialize().unwrap();
        assert_eq!(m.shape(), (16, 36));
        let dense = &m * nalgebra::DVector::from_column_slice(x.data());
        assert!(max_diff(out.as_slice(), dense.as_slice()) < 1e-12);

        // brute-force window sums
        for a in 0..4 {
            for b in 0..4 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += filter.coeffs()[i + 3 * j] * x.get(a + i, b + j, 0);
                    }
                }
                assert!((acc - out[(a, b)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_channel_mismatch() {
        let x = FeatureTensor::zeros(4, 4, 2);
        let filter = FilterAtom::square(vec![0.0; 9], 3, 1).unwrap();
        assert!(matches!(conv2d_valid(&filter, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv2d_line_matches_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let signal = random_vec(&mut rng, 15);
        let taps = random_vec(&mut rng, 4);
        let x = FeatureTensor::new(1, 15, 1, signal.clone()).unwrap();
        let filter = FilterAtom::new(taps.clone(), 1, 4, 1).unwrap();
        let a = conv2d_valid(&filter, &x).unwrap();
        let b = toeplitz_apply(&FilterAtom::line(taps).unwrap(), &signal).unwrap();
        assert!(max_diff(a.as_slice(), &b) < 1e-12);
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(1.5, 1.0).unwrap(), 0.5);
        assert_eq!(soft_threshold(-0.3, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5).unwrap(), -1.5);
        assert_eq!(soft_threshold(0.123, 0.0).unwrap(), 0.123);
        assert!(matches!(soft_threshold(1.0, -0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vec_is_column_stacking() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&a), vec![1.0, 3.0, 2.0, 4.0]);
        assert!(mat(&[1.0, 2.0, 3.0], 2, 2).is_err());

        let b = DMatrix::from_fn(3, 2, |i, j| (10 * i + j) as f64);
        let v = vec(&b);
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(v[i + 3 * j], (10 * i + j) as f64);
            }
        }
        assert_eq!(mat(&v, 3, 2).unwrap(), b);
    }

    #[test]
    fn materialization_is_capped() {
        let atom = FilterAtom::line(vec![1.0; 3]).unwrap();
        let op = ToeplitzOperator::new(atom, 2000).unwrap();
        assert!(op.materialize().is_err());
    }

    #[test]
    fn stacked_apply_routes_agree_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Geometry::square(5, 2, 3).unwrap();
        let base = DMatrix::from_fn(3, g.atom_len(), |_, _| rng.random_range(-1.0..1.0));
        let h = ConvAnalysisDictionary::new(base, g).unwrap();
        let x = random_vec(&mut rng, 50);
        let a = h.apply(&x).unwrap();
        let b = h.apply_blockwise(&x).unwrap();
        let dense = h.materialize().unwrap() * nalgebra::DVector::from_vec(x);
        assert!(max_diff(&a, &b) < 1e-12);
        assert!(max_diff(&a, dense.as_slice()) < 1e-12);
    }

    proptest! {
        #[test]
        fn right_dual_identity(seed in any::<u64>(), n in 1usize..8, extra in 0usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = n + extra;
            let atom = FilterAtom::line(random_vec(&mut rng, n)).unwrap();
            let x = random_vec(&mut rng, l);
            let a = toeplitz_apply(&atom, &x).unwrap();
            let b = right_dual_apply(&x, &atom).unwrap();
            prop_assert!(max_diff(&a, &b) < 1e-12);
        }

        #[test]
        fn toeplitz_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w1 = random_vec(&mut rng, 4);
            let w2 = random_vec(&mut rng, 4);
            let x = random_vec(&mut rng, 11);
            let comb: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = toeplitz_apply(&FilterAtom::line(comb).unwrap(), &x).unwrap();
            let t1 = toeplitz_apply(&FilterAtom::line(w1).unwrap(), &x).unwrap();
            let t2 = toeplitz_apply(&FilterAtom::line(w2).unwrap(), &x).unwrap();
            let rhs: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| alpha * a + beta * b).collect();
            prop_assert!(max_diff(&lhs, &rhs) < 1e-12);
        }

        #[test]
        fn soft_threshold_non_expansive(a in -10.0f64..10.0, b in -10.0f64..10.0, l in 0.0f64..5.0) {
            let sa = soft_threshold(a, l).unwrap();
            let sb = soft_threshold(b, l).unwrap();
            prop_assert!((sa - sb).abs() <= (a - b).abs() + 1e-15);
        }

        #[test]
        fn small_operators_match_materialization(
            seed in any::<u64>(), rows in 1usize..=8, cols in 1usize..=8, fr in 1usize..=8, fc in 1usize..=8, ch in 1usize..=2,
        ) {
            prop_assume!(fr <= rows && fc <= cols);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Geometry::new(rows, cols, ch, fr, fc).unwrap();
            let atom = FilterAtom::new(random_vec(&mut rng, g.atom_len()), fr, fc, ch).unwrap();
            let x = random_vec(&mut rng, g.signal_len());
            let op = ToeplitzOperator::with_geometry(atom, g).unwrap();
            let dense = op.materialize().unwrap() * nalgebra::DVector::from_vec(x.clone());
            prop_assert!(max_diff(&op.apply(&x).unwrap(), dense.as_slice()) < 1e-12);
        }
    }
}
