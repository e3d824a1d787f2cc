//! One analysis layer: valid correlation with a filter bank followed by
//! per-channel soft-thresholding.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::sizing::LayerSpec;
use crate::structured::{conv_bank_valid, shrink, threshold_channels, FeatureTensor, Geometry};

/// Learned parameters of an analysis layer. Rows of `omega` are
/// `side × side × in_channels` filters; information-preserving atoms come first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLayer {
    pub spec: LayerSpec,
    pub omega: DMatrix<f64>,
    pub lambdas: Vec<f64>,
}

impl TrainedLayer {
    pub fn new(spec: LayerSpec, omega: DMatrix<f64>, lambdas: Vec<f64>) -> Result<Self> {
        let layer = Self { spec, omega, lambdas };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if self.omega.shape() != (s.atoms, s.atom_len()) {
            return Err(Error::dim(format!(
                "layer {}: dictionary is {}x{}, expected {}x{}",
                s.index,
                self.omega.nrows(),
                self.omega.ncols(),
                s.atoms,
                s.atom_len()
            )));
        }
        if self.lambdas.len() != s.atoms {
            return Err(Error::dim(format!(
                "layer {}: {} thresholds for {} atoms",
                s.index,
                self.lambdas.len(),
                s.atoms
            )));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::arg(format!("layer {}: thresholds must be finite and nonnegative", s.index)));
        }
        if self.omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("layer {}: non-finite dictionary entries", s.index)));
        }
        if s.ipad_atoms > s.atoms {
            return Err(Error::arg(format!("layer {}: more information-preserving atoms than atoms", s.index)));
        }
        Ok(())
    }
}

/// `S(Ω * X, λ)`: channel `j` of the output is `S_{λ_j}(ω_j * X)`.
pub fn layer_forward(x: &FeatureTensor, layer: &TrainedLayer) -> Result<FeatureTensor> {
    let s = &layer.spec;
    if x.channels() != s.in_channels {
        return Err(Error::dim(format!(
            "layer {} expects {} input channels, got {}",
            s.index,
            s.in_channels,
            x.channels()
        )));
    }
    if x.rows() < s.side || x.cols() < s.side {
        return Err(Error::dim(format!(
            "layer {}: {}x{} input is smaller than its {}x{} filters",
            s.index,
            x.rows(),
            x.cols(),
            s.side,
            s.side
        )));
    }
    let mut out = conv_bank_valid(&layer.omega, s.side, x)?;
    threshold_channels(&mut out, &layer.lambdas)?;
    Ok(out)
}

/// Linear responses `vec(R(x) Ωᵀ)` of every column of `data`, each column a
/// `side × side × channels` tensor; filters are `filter_side` square.
///
/// Row `a + P j` of the result is atom `j` at output position `a` (P positions).
pub fn layer_responses(
    omega: &DMatrix<f64>,
    data: &DMatrix<f64>,
    side: usize,
    channels: usize,
    filter_side: usize,
) -> Result<DMatrix<f64>> {
    let g = Geometry::square(side, channels, filter_side)?;
    if data.nrows() != g.signal_len() || omega.ncols() != g.atom_len() {
        return Err(Error::dim("responses: data or atom length does not match the geometry"));
    }
    let p = g.positions();
    let n = g.atom_len();
    let m = omega.nrows();
    let table = g.tap_table();
    let mut out = DMatrix::zeros(p * m, data.ncols());
    for a in 0..p {
        let window = data.select_rows(table[a * n..(a + 1) * n].iter());
        let resp = omega * window;
        for j in 0..m {
            out.row_mut(a + p * j).copy_from(&resp.row(j));
        }
    }
    Ok(out)
}

/// Soft-thresholds rows `j P .. (j+1) P` with `lambdas[j]`.
pub fn threshold_rows(responses: &mut DMatrix<f64>, positions: usize, lambdas: &[f64]) -> Result<()> {
    if responses.nrows() != positions * lambdas.len() {
        return Err(Error::dim("threshold count does not match response rows"));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::arg("thresholds must be nonnegative"));
    }
    let rows = responses.nrows();
    for c in 0..responses.ncols() {
        let mut col = responses.column_mut(c);
        for r in 0..rows {
            col[r] = shrink(col[r], lambdas[r / positions]);
        }
    }
    Ok(())
}

/// Filters of the single convolution equivalent to `first` (side `p1`) followed
/// by `second` (side `p2`) with no thresholding; the result has side `p1 + p2 − 1`
/// and the input channels of `first`.
pub fn compose_filters(first: &DMatrix<f64>, p1: usize, second: &DMatrix<f64>, p2: usize) -> Result<DMatrix<f64>> {
    let mid = first.nrows();
    if p1 == 0 || p2 == 0 || !first.ncols().is_multiple_of(p1 * p1) {
        return Err(Error::dim("first bank does not hold square filters of the given side"));
    }
    let c0 = first.ncols() / (p1 * p1);
    if second.ncols() != p2 * p2 * mid {
        return Err(Error::dim(format!("second bank needs {p2}x{p2}x{mid} filters, has length {}", second.ncols())));
    }
    let q = p1 + p2 - 1;
    let mut out = DMatrix::zeros(second.nrows(), q * q * c0);
    for k in 0..second.nrows() {
        for j in 0..mid {
            for j2 in 0..p2 {
                for i2 in 0..p2 {
                    let w2 = second[(k, i2 + p2 * (j2 + p2 * j))];
                    if w2 == 0.0 {
                        continue;
                    }
                    for c in 0..c0 {
                        for j1 in 0..p1 {
                            for i1 in 0..p1 {
                                let w1 = first[(j, i1 + p1 * (j1 + p1 * c))];
                                out[(k, (i1 + i2) + q * ((j1 + j2) + q * c))] += w2 * w1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
