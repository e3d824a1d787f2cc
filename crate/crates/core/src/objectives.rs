//! Penalty terms of the dictionary learning objective and their gradients.
//!
//! Every gradient is with respect to the compact m×n dictionary, one atom per row.
//! The unit tests certify each one against central finite differences.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::structured::{Geometry, RightDual};

/// Weights of `f = g + κ h + υ l + μ p` and the sparsity sharpness `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub nu: f64,
    pub kappa: f64,
    pub upsilon: f64,
    pub mu: f64,
}

impl ObjectiveConfig {
    /// Default weights for information-preserving atoms of length `atom_len`.
    pub fn ipad(atom_len: usize, atoms: usize) -> Self {
        Self { nu: 10.0 * atom_len as f64, kappa: 100.0 * atoms as f64, upsilon: 0.01 * atoms as f64, mu: 0.0 }
    }

    /// Default weights for clustering atoms of length `atom_len`.
    pub fn cad(atom_len: usize, atoms: usize) -> Self {
        Self { nu: 10.0 * atom_len as f64, kappa: 0.1 * atoms as f64, upsilon: 0.01 * atoms as f64, mu: 100.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::arg(format!("nu must be positive, got {}", self.nu)));
        }
        for (name, v) in [("kappa", self.kappa), ("upsilon", self.upsilon), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("nu must be positive, got {nu}")))
    }
}

/// Log-square sparsity penalty
/// `g(Ω) = 1/(N m log(1+ν)) Σ log(1 + ν (ω_jᵀ x_i)²)`.
pub fn sparsity_value_grad(omega: &DMatrix<f64>, x: &DMatrix<f64>, nu: f64) -> Result<(f64, DMatrix<f64>)> {
    check_nu(nu)?;
    let (m, n) = omega.shape();
    if x.nrows() != n {
        return Err(Error::dim(format!("data rows {} differ from atom length {n}", x.nrows())));
    }
    if x.ncols() == 0 || m == 0 {
        return Err(Error::dim("sparsity term needs at least one atom and one sample"));
    }
    let c = 1.0 / (x.ncols() as f64 * m as f64 * nu.ln_1p());
    let mut r = omega * x;
    let mut value = 0.0;
    for v in r.iter_mut() {
        let s = nu * *v * *v;
        value += s.ln_1p();
        *v = 2.0 * nu * *v / (1.0 + s);
    }
    let grad = (r * x.transpose()) * c;
    Ok((value * c, grad))
}

/// Log-barrier against coherent atoms,
/// `l(Ω) = −1/(m(m−1)) Σ_{i<j} log(1 − (ω_iᵀω_j)²)`.
///
/// Returns `+∞` (and a zero gradient) when a pair is fully coherent.
pub fn barrier_value_grad(omega: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (m, n) = omega.shape();
    let mut grad = DMatrix::zeros(m, n);
    if m < 2 {
        return (0.0, grad);
    }
    let gram = omega * omega.transpose();
    let scale = 1.0 / (m as f64 * (m as f64 - 1.0));
    let mut value = 0.0;
    let mut weights = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let c = gram[(i, j)];
            let gap = 1.0 - c * c;
            if !(gap > 0.0) {
                return (f64::INFINITY, grad);
            }
            value -= gap.ln();
            let w = 2.0 * c / gap;
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    grad = weights * omega * scale;
    (value * scale, grad)
}

/// Joint sparsifying penalty for clustering atoms,
/// `p(Ψ) = c Σ log(1 + ν ((ψ_kᵀŷ_j)² − (ψ_kᵀe_j)²)²)`, `c = 1/(N m log(1+ν))`.
pub fn joint_sparsity_value_grad(
    psi: &DMatrix<f64>,
    estimate: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    nu: f64,
) -> Result<(f64, DMatrix<f64>)> {
    check_nu(nu)?;
    let (m, n) = psi.shape();
    if estimate.shape() != residual.shape() {
        return Err(Error::dim("estimate and residual shapes differ"));
    }
    if estimate.nrows() != n {
        return Err(Error::dim(format!("data rows {} differ from atom length {n}", estimate.nrows())));
    }
    if estimate.ncols() == 0 || m == 0 {
        return Err(Error::dim("joint term needs at least one atom and one sample"));
    }
    let c = 1.0 / (estimate.ncols() as f64 * m as f64 * nu.ln_1p());
    let mut a = psi * estimate;
    let mut b = psi * residual;
    let mut value = 0.0;
    for (av, bv) in a.iter_mut().zip(b.iter_mut()) {
        let t = *av * *av - *bv * *bv;
        let s = nu * t * t;
        value += s.ln_1p();
        let f = 2.0 * nu * t / (1.0 + s);
        *av *= 2.0 * f;
        *bv *= -2.0 * f;
    }
    let grad = (a * estimate.transpose() + b * residual.transpose()) * c;
    Ok((value * c, grad))
}

/// Information-preservation term built from right duals of the signal basis.
///
/// Column `i` of the coefficient matrix `Q` is `vec(R(w_i, n) Ωᵀ)`, and
/// `h(Ω) = −1/(K log K) · log det(QᵀQ / q)` with `q = positions · m`.
/// With a single basis vector the normalization is taken as 1.
#[derive(Debug, Clone)]
pub struct InfoTerm {
    duals: Vec<DMatrix<f64>>,
    positions: usize,
    atom_len: usize,
}

/// Value and gradient of the information term.
#[derive(Debug, Clone)]
pub struct InfoValue {
    /// `+∞` when `QᵀQ` is singular.
    pub value: f64,
    /// Absent when the value is infinite.
    pub grad: Option<DMatrix<f64>>,
}

impl InfoTerm {
    /// `basis` holds the signal subspace `W` (l×K) laid out as signals of `geometry`.
    pub fn new(basis: &DMatrix<f64>, geometry: &Geometry) -> Result<Self> {
        if basis.nrows() != geometry.signal_len() {
            return Err(Error::dim(format!(
                "basis vectors have length {}, geometry expects {}",
                basis.nrows(),
                geometry.signal_len()
            )));
        }
        let table = geometry.tap_table();
        let positions = geometry.positions();
        let atom_len = geometry.atom_len();
        let duals = basis
            .column_iter()
            .map(|w| {
                let w: Vec<f64> = w.iter().copied().collect();
                RightDual::from_table(&w, &table, positions, atom_len).into_matrix()
            })
            .collect();
        Ok(Self { duals, positions, atom_len })
    }

    /// Unstructured special case: atoms act on whole signals (one placement).
    pub fn dense(basis: &DMatrix<f64>) -> Result<Self> {
        let n = basis.nrows();
        Self::new(basis, &Geometry::line(n, n)?)
    }

    pub fn rank(&self) -> usize {
        self.duals.len()
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    /// `R(w_i, n)`, positions×n.
    pub fn dual(&self, i: usize) -> &DMatrix<f64> {
        &self.duals[i]
    }

    /// The (positions·m)×K coefficient matrix `Q`.
    pub fn coefficients(&self, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if omega.ncols() != self.atom_len {
            return Err(Error::dim(format!(
                "atoms have length {}, information term expects {}",
                omega.ncols(),
                self.atom_len
            )));
        }
        let m = omega.nrows();
        let mut q = DMatrix::zeros(self.positions * m, self.rank());
        let omega_t = omega.transpose();
        for (i, r) in self.duals.iter().enumerate() {
            // R Ωᵀ is positions×m; column-stacking puts position fastest.
            let block = r * &omega_t;
            q.column_mut(i).copy_from_slice(block.as_slice());
        }
        Ok(q)
    }

    fn normalization(&self) -> f64 {
        let k = self.rank() as f64;
        if self.rank() < 2 {
            1.0
        } else {
            1.0 / (k * k.ln())
        }
    }

    pub fn value_grad(&self, omega: &DMatrix<f64>, with_grad: bool) -> Result<InfoValue> {
        let k = self.rank();
        let (m, n) = omega.shape();
        if k == 0 {
            return Ok(InfoValue { value: 0.0, grad: with_grad.then(|| DMatrix::zeros(m, n)) });
        }
        let q = self.coefficients(omega)?;
        let rows = (self.positions * m) as f64;
        let sigma = q.transpose() * &q;
        let chol = match sigma.clone().cholesky() {
            Some(c) => c,
            None => return Ok(InfoValue { value: f64::INFINITY, grad: None }),
        };
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..k {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Ok(InfoValue { value: f64::INFINITY, grad: None });
            }
            log_det += 2.0 * d.ln();
        }
        let scale = self.normalization();
        let value = -scale * (log_det - k as f64 * rows.ln());
        if !value.is_finite() {
            return Ok(InfoValue { value: f64::INFINITY, grad: None });
        }
        if !with_grad {
            return Ok(InfoValue { value, grad: None });
        }
        // d log det(QᵀQ) = 2 <Q Σ⁻¹, dQ>; column i of QΣ⁻¹ folds back to positions×m.
        let g = chol.solve(&q.transpose()).transpose();
        let mut grad = DMatrix::zeros(m, n);
        for (i, r) in self.duals.iter().enumerate() {
            let gi = DMatrix::from_column_slice(self.positions, m, g.column(i).as_slice());
            grad += gi.transpose() * r;
        }
        grad *= -2.0 * scale;
        Ok(InfoValue { value, grad: Some(grad) })
    }
}

/// Per-atom scale of the analysis responses, the sample standard deviation
/// of `ω_jᵀ x_i` over the samples.
#[derive(Debug, Clone)]
pub struct ResponseScales {
    pub sigma: Vec<f64>,
    /// Atoms whose responses are constant (`σ = 0`).
    pub degenerate: Vec<usize>,
}

pub fn laplacian_scales(omega: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<ResponseScales> {
    if x.nrows() != omega.ncols() {
        return Err(Error::dim("data rows differ from atom length"));
    }
    let samples = x.ncols();
    if samples < 2 {
        return Err(Error::dim("response scales need at least two samples"));
    }
    let r = omega * x;
    let mut sigma = Vec::with_capacity(omega.nrows());
    let mut degenerate = Vec::new();
    for (j, row) in r.row_iter().enumerate() {
        let mean = row.sum() / samples as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (samples - 1) as f64;
        let s = var.sqrt();
        if !(s > 0.0) {
            degenerate.push(j);
        }
        sigma.push(s);
    }
    Ok(ResponseScales { sigma, degenerate })
}

/// Raw (unweighted) term values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms {
    pub g: f64,
    pub h: f64,
    pub l: f64,
    pub p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub terms: Terms,
    pub grad: Option<DMatrix<f64>>,
}

/// A batched objective over dictionaries.
pub trait Objective {
    fn batches(&self) -> usize;

    /// Value (possibly `+∞`) on `batch`, plus the Euclidean gradient if asked and finite.
    fn evaluate(&self, omega: &DMatrix<f64>, batch: usize, with_grad: bool) -> Result<Evaluation>;
}

/// `f = g + κh + υl (+ μp)` over column batches of the training data.
#[derive(Debug, Clone)]
pub struct DictionaryObjective {
    config: ObjectiveConfig,
    info: Option<InfoTerm>,
    sparse: Vec<DMatrix<f64>>,
    residual: Option<Vec<DMatrix<f64>>>,
}

/// Splits the columns of `data` into `batches` nearly equal contiguous blocks.
pub fn split_columns(data: &DMatrix<f64>, batches: usize) -> Vec<DMatrix<f64>> {
    let n = data.ncols();
    let b = batches.clamp(1, n.max(1));
    (0..b)
        .map(|i| {
            let start = i * n / b;
            let end = (i + 1) * n / b;
            data.columns(start, end - start).into_owned()
        })
        .collect()
}

impl DictionaryObjective {
    /// Information-preserving objective: sparsity on `x`, information term, barrier.
    pub fn ipad(config: ObjectiveConfig, info: Option<InfoTerm>, x: &DMatrix<f64>, batches: usize) -> Result<Self> {
        config.validate()?;
        if x.ncols() == 0 {
            return Err(Error::dim("empty training data"));
        }
        Ok(Self { config, info, sparse: split_columns(x, batches), residual: None })
    }

    /// Clustering objective: sparsity on the estimate, joint term on (estimate, residual).
    pub fn cad(
        config: ObjectiveConfig,
        info: Option<InfoTerm>,
        estimate: &DMatrix<f64>,
        residual: &DMatrix<f64>,
        batches: usize,
    ) -> Result<Self> {
        config.validate()?;
        if estimate.shape() != residual.shape() {
            return Err(Error::dim("estimate and residual shapes differ"));
        }
        if estimate.ncols() == 0 {
            return Err(Error::dim("empty training data"));
        }
        Ok(Self {
            config,
            info,
            sparse: split_columns(estimate, batches),
            residual: Some(split_columns(residual, batches)),
        })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }
}

impl Objective for DictionaryObjective {
    fn batches(&self) -> usize {
        self.sparse.len()
    }

    fn evaluate(&self, omega: &DMatrix<f64>, batch: usize, with_grad: bool) -> Result<Evaluation> {
        let cfg = &self.config;
        let data = self.sparse.get(batch).ok_or_else(|| Error::arg(format!("batch {batch} out of range")))?;
        let (g, mut grad) = sparsity_value_grad(omega, data, cfg.nu)?;
        let (l, l_grad) = barrier_value_grad(omega);
        let mut terms = Terms { g, h: 0.0, l, p: None };
        let mut finite = l.is_finite();
        grad += l_grad * cfg.upsilon;
        if let Some(info) = self.info.as_ref().filter(|_| cfg.kappa > 0.0) {
            let iv = info.value_grad(omega, with_grad && finite)?;
            terms.h = iv.value;
            if iv.value.is_finite() {
                if let Some(hg) = iv.grad {
                    grad += hg * cfg.kappa;
                }
            } else {
                finite = false;
            }
        }
        if let Some(res) = &self.residual {
            let (p, p_grad) = joint_sparsity_value_grad(omega, data, &res[batch], cfg.nu)?;
            terms.p = Some(p);
            grad += p_grad * cfg.mu;
        }
        let mut value = terms.g + cfg.upsilon * terms.l + cfg.kappa * terms.h;
        if let Some(p) = terms.p {
            value += cfg.mu * p;
        }
        if !finite || !value.is_finite() {
            return Ok(Evaluation { value: f64::INFINITY, terms, grad: None });
        }
        Ok(Evaluation { value, terms, grad: with_grad.then_some(grad) })
    }
}
