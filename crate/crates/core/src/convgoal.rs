//! Geometric conjugate-gradient learner over unit-norm atoms orthogonal to a
//! fixed null space.
//!
//! Each batch of the objective gets up to `iters_per_batch` iterations of
//! Polak-Ribière (PR+) conjugate gradient with Armijo backtracking. Directions
//! are projected per atom onto the tangent space of the feasible set, and every
//! trial point is pulled back onto the set by [`FeasibleSet::retract`].

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::objectives::{Objective, Terms};
use crate::subspace::TangentProjector;

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_shrinks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { initial_step: 1.0, shrink: 0.5, sufficient_decrease: 1e-4, max_shrinks: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub iters_per_batch: usize,
    /// Upper bound on the number of objective batches visited.
    pub max_batches: usize,
    /// Stop when a batch pass lowers its objective by less than this fraction.
    pub halt_tol: f64,
    pub line_search: LineSearchConfig,
    /// Start each line search at twice the previous accepted step instead of `initial_step`.
    pub warm_start: bool,
    /// Fresh random starts tried when the objective is infinite at the initial point.
    pub max_reinit: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iters_per_batch: 100,
            max_batches: 10,
            halt_tol: 1e-4,
            line_search: LineSearchConfig::default(),
            warm_start: false,
            max_reinit: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if self.iters_per_batch == 0 || self.max_batches == 0 {
            return Err(Error::arg("iteration and batch counts must be at least 1"));
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(Error::arg(format!("line-search shrink must lie in (0, 1), got {}", ls.shrink)));
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return Err(Error::arg(format!(
                "sufficient-decrease constant must lie in (0, 1), got {}",
                ls.sufficient_decrease
            )));
        }
        if !(ls.initial_step > 0.0 && ls.initial_step.is_finite()) {
            return Err(Error::arg("initial step must be positive"));
        }
        if !(self.halt_tol >= 0.0) {
            return Err(Error::arg("halting tolerance must be nonnegative"));
        }
        Ok(())
    }
}

/// Product of unit spheres intersected with the orthogonal complement of `V`,
/// together with the averaging projector that shapes update directions.
#[derive(Debug, Clone)]
pub struct FeasibleSet {
    null_basis: DMatrix<f64>,
    averaged: DMatrix<f64>,
}

impl FeasibleSet {
    /// `null_basis` must have orthonormal columns; `averaged` is the n×n projector `P`.
    pub fn new(null_basis: DMatrix<f64>, averaged: DMatrix<f64>) -> Result<Self> {
        let n = averaged.nrows();
        if averaged.ncols() != n {
            return Err(Error::dim("averaging projector must be square"));
        }
        if null_basis.ncols() > 0 {
            if null_basis.nrows() != n {
                return Err(Error::dim("null-space basis rows differ from atom length"));
            }
            if null_basis.ncols() >= n {
                return Err(Error::arg("null space leaves no room for atoms"));
            }
            let err = crate::linalg::orthonormality_error(&null_basis);
            if err > 1e-8 {
                return Err(Error::arg(format!("null-space basis is not orthonormal (error {err:.2e})")));
            }
        }
        let null_basis = if null_basis.ncols() == 0 { DMatrix::zeros(n, 0) } else { null_basis };
        Ok(Self { null_basis, averaged })
    }

    /// Plain product of spheres in `R^n`.
    pub fn sphere(n: usize) -> Self {
        Self { null_basis: DMatrix::zeros(n, 0), averaged: DMatrix::identity(n, n) }
    }

    pub fn atom_len(&self) -> usize {
        self.averaged.nrows()
    }

    pub fn null_basis(&self) -> &DMatrix<f64> {
        &self.null_basis
    }

    pub fn averaged(&self) -> &DMatrix<f64> {
        &self.averaged
    }

    fn project_out(&self, row: &mut DVector<f64>) {
        if self.null_basis.ncols() > 0 {
            let c = self.null_basis.transpose() * &*row;
            *row -= &self.null_basis * c;
        }
    }

    fn random_row<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        loop {
            let mut row = DVector::from_fn(self.atom_len(), |_, _| StandardNormal.sample(rng));
            self.project_out(&mut row);
            let norm = row.norm();
            if norm > 1e-6 {
                return row / norm;
            }
        }
    }

    /// Pulls every row onto the feasible set: project onto `V⊥`, normalize, twice.
    /// Rows with nothing left outside `span(V)` are redrawn at random.
    pub fn retract<R: rand::Rng>(&self, raw: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.atom_len() {
            return Err(Error::dim(format!("atoms have length {}, expected {}", raw.ncols(), self.atom_len())));
        }
        let mut out = raw.clone();
        for i in 0..raw.nrows() {
            let mut row = raw.row(i).transpose();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("non-finite atom entries"));
            }
            let before = row.norm();
            for _ in 0..2 {
                self.project_out(&mut row);
                let norm = row.norm();
                if !(norm > 1e-8 * before.max(f64::MIN_POSITIVE)) {
                    row = self.random_row(rng);
                    continue;
                }
                row /= norm;
            }
            out.set_row(i, &row.transpose());
        }
        Ok(out)
    }

    /// i.i.d. Gaussian rows, retracted.
    pub fn random_point<R: rand::Rng>(&self, atoms: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let raw = DMatrix::from_fn(atoms, self.atom_len(), |_, _| StandardNormal.sample(rng));
        self.retract(&raw, rng)
    }

    pub fn tangent(&self, atom: &[f64]) -> Result<TangentProjector<'_>> {
        TangentProjector::new(atom, &self.null_basis, &self.averaged)
    }

    /// Largest deviation of a row norm from one.
    pub fn unit_norm_error(omega: &DMatrix<f64>) -> f64 {
        omega.row_iter().map(|r| (r.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max |Vᵀ ω_i|` over atoms.
    pub fn null_violation(&self, omega: &DMatrix<f64>) -> f64 {
        if self.null_basis.ncols() == 0 {
            return 0.0;
        }
        (omega * &self.null_basis).amax()
    }
}

/// Per-atom projectors at one point, used for gradient projection and transport.
struct TangentSpace<'a> {
    projectors: Vec<TangentProjector<'a>>,
}

impl<'a> TangentSpace<'a> {
    fn at(set: &'a FeasibleSet, omega: &DMatrix<f64>) -> Result<Self> {
        let projectors = omega
            .row_iter()
            .map(|r| {
                let atom: Vec<f64> = r.iter().copied().collect();
                set.tangent(&atom)
            })
            .collect::<Result<_>>()?;
        Ok(Self { projectors })
    }

    /// Row-wise `(I − Q†Q) P (I − Q†Q) g`.
    fn project_gradient(&self, grad: &DMatrix<f64>) -> DMatrix<f64> {
        self.map_rows(grad, |p, g| p.symmetric_apply(g))
    }

    /// Row-wise `(I − Q†Q) d`.
    fn transport(&self, dir: &DMatrix<f64>) -> DMatrix<f64> {
        self.map_rows(dir, |p, d| p.tangent_part(d))
    }

    fn map_rows(
        &self,
        a: &DMatrix<f64>,
        f: impl Fn(&TangentProjector<'a>, &DVector<f64>) -> DVector<f64>,
    ) -> DMatrix<f64> {
        let mut out = a.clone();
        for (i, p) in self.projectors.iter().enumerate() {
            let row = f(p, &a.row(i).transpose());
            out.set_row(i, &row.transpose());
        }
        out
    }
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Conjugate direction from projected gradients (all given in the current tangent space).
///
/// Uses the PR+ coefficient and restarts with steepest descent whenever the
/// combined direction is not a descent direction for `euclid_grad`.
/// Returns the direction and the coefficient actually used.
pub fn cg_direction(
    grad: &DMatrix<f64>,
    prev: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    euclid_grad: &DMatrix<f64>,
) -> (DMatrix<f64>, f64) {
    let steepest = -grad;
    let Some((grad_prev, dir_prev)) = prev else {
        return (steepest, 0.0);
    };
    let denom = inner(grad_prev, grad_prev);
    if !(denom > 0.0) {
        return (steepest, 0.0);
    }
    let beta = (inner(grad, &(grad - grad_prev)) / denom).max(0.0);
    if beta == 0.0 {
        return (steepest, 0.0);
    }
    let dir = &steepest + dir_prev * beta;
    if inner(&dir, euclid_grad) < 0.0 {
        (dir, beta)
    } else {
        (steepest, 0.0)
    }
}

/// Result of a backtracking search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearch {
    Accepted { step: f64, value: f64, shrinks: usize },
    Rejected,
}

/// Armijo backtracking on `phi(α) = f(retract(Ω + α·dir))`.
///
/// Tries `α = α₀ βᵏ` for `k = 0..=max_shrinks` and accepts the first step with
/// `phi(α) ≤ f0 + c₁ α · slope`. A non-negative slope is rejected immediately.
pub fn backtracking_search<F>(
    mut phi: F,
    f0: f64,
    slope: f64,
    initial_step: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(slope < 0.0) || !f0.is_finite() {
        return Ok(LineSearch::Rejected);
    }
    let mut step = initial_step;
    for shrinks in 0..=cfg.max_shrinks {
        let value = phi(step)?;
        if value.is_finite() && value <= f0 + cfg.sufficient_decrease * step * slope {
            return Ok(LineSearch::Accepted { step, value, shrinks });
        }
        step *= cfg.shrink;
    }
    Ok(LineSearch::Rejected)
}

/// One accepted iterate (or the starting point of a batch, with `step = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub batch: usize,
    pub iter: usize,
    pub value: f64,
    pub terms: Terms,
    pub step: f64,
    pub unit_norm_error: f64,
    pub null_violation: f64,
}

impl IterationRecord {
    /// `batch=<i> iter=<t> f=<val> g=<val> h=<val> l=<val> [p=<val>] step=<α>`
    pub fn log_line(&self) -> String {
        let t = &self.terms;
        let mut s = format!(
            "batch={} iter={} f={:.10e} g={:.10e} h={:.10e} l={:.10e}",
            self.batch, self.iter, self.value, t.g, t.h, t.l
        );
        if let Some(p) = t.p {
            s.push_str(&format!(" p={p:.10e}"));
        }
        s.push_str(&format!(" step={:.6e}", self.step));
        s
    }
}

#[derive(Debug, Clone)]
pub struct LearnReport {
    pub omega: DMatrix<f64>,
    pub records: Vec<IterationRecord>,
    /// Mean objective over all batches at the starting point and at the result.
    pub initial_value: f64,
    pub final_value: f64,
    pub batches_run: usize,
    /// Random restarts needed to find a finite starting objective.
    pub reinits: usize,
}

/// Mean objective over all batches; `+∞` if any batch is infinite.
pub fn full_objective<O: Objective + ?Sized>(objective: &O, omega: &DMatrix<f64>) -> Result<f64> {
    let b = objective.batches();
    let mut acc = 0.0;
    for i in 0..b {
        acc += objective.evaluate(omega, i, false)?.value;
    }
    Ok(acc / b as f64)
}

/// Minimizes `objective` over the feasible set starting from `init`.
pub fn learn_dictionary<O: Objective + ?Sized>(
    init: &DMatrix<f64>,
    objective: &O,
    set: &FeasibleSet,
    cfg: &OptimizerConfig,
) -> Result<LearnReport> {
    cfg.validate()?;
    if init.nrows() == 0 {
        return Err(Error::arg("dictionary needs at least one atom"));
    }
    if objective.batches() == 0 {
        return Err(Error::arg("objective has no batches"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = init.nrows();
    let mut omega = set.retract(init, &mut rng)?;
    let mut reinits = 0;
    let mut initial_value = full_objective(objective, &omega)?;
    while !initial_value.is_finite() {
        if reinits == cfg.max_reinit {
            return Err(Error::numerical(format!(
                "objective infinite at the initial dictionary after {reinits} random restarts"
            )));
        }
        reinits += 1;
        warn!("objective infinite at the initial dictionary, drawing a new one ({reinits})");
        omega = set.random_point(m, &mut rng)?;
        initial_value = full_objective(objective, &omega)?;
    }

    let mut records = Vec::new();
    let batches = cfg.max_batches;
    let mut batches_run = 0;
    let mut step_hint = cfg.line_search.initial_step;
    for pass in 0..batches {
        let batch = pass % objective.batches();
        batches_run += 1;
        let mut eval = objective.evaluate(&omega, batch, true)?;
        if !eval.value.is_finite() {
            return Err(Error::numerical(format!("objective became infinite on batch {batch}")));
        }
        let start_value = eval.value;
        records.push(record(pass, 0, &eval.value, eval.terms, 0.0, set, &omega));
        debug!("{}", records.last().expect("just pushed").log_line());

        let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
        for iter in 1..=cfg.iters_per_batch {
            let euclid = eval.grad.take().ok_or_else(|| Error::numerical("missing gradient"))?;
            let space = TangentSpace::at(set, &omega)?;
            let grad = space.project_gradient(&euclid);
            let transported = prev.as_ref().map(|(g, d)| (space.transport(g), space.transport(d)));
            let (mut dir, _) = cg_direction(&grad, transported.as_ref().map(|(g, d)| (g, d)), &euclid);

            let mut outcome =
                search(objective, set, &omega, &dir, &euclid, eval.value, batch, cfg, step_hint, &mut rng)?;
            if outcome.is_none() && prev.is_some() {
                // fall back to steepest descent once
                dir = -&grad;
                outcome = search(objective, set, &omega, &dir, &euclid, eval.value, batch, cfg, step_hint, &mut rng)?;
            }
            let Some((step, candidate)) = outcome else {
                break;
            };
            omega = candidate;
            eval = objective.evaluate(&omega, batch, true)?;
            if cfg.warm_start {
                step_hint = (2.0 * step).min(cfg.line_search.initial_step.max(1.0) * 1e6);
            }
            records.push(record(pass, iter, &eval.value, eval.terms, step, set, &omega));
            debug!("{}", records.last().expect("just pushed").log_line());
            prev = Some((grad, dir));
        }

        let end_value = eval.value;
        let decrease = (start_value - end_value) / start_value.abs().max(f64::MIN_POSITIVE);
        if decrease < cfg.halt_tol {
            break;
        }
    }
    let final_value = full_objective(objective, &omega)?;
    Ok(LearnReport { omega, records, initial_value, final_value, batches_run, reinits })
}

fn record(
    batch: usize,
    iter: usize,
    value: &f64,
    terms: Terms,
    step: f64,
    set: &FeasibleSet,
    omega: &DMatrix<f64>,
) -> IterationRecord {
    IterationRecord {
        batch,
        iter,
        value: *value,
        terms,
        step,
        unit_norm_error: FeasibleSet::unit_norm_error(omega),
        null_violation: set.null_violation(omega),
    }
}

#[allow(clippy::too_many_arguments)]
fn search<O: Objective + ?Sized>(
    objective: &O,
    set: &FeasibleSet,
    omega: &DMatrix<f64>,
    dir: &DMatrix<f64>,
    euclid: &DMatrix<f64>,
    f0: f64,
    batch: usize,
    cfg: &OptimizerConfig,
    initial_step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, DMatrix<f64>)>> {
    let slope = inner(euclid, dir);
    let mut last: Option<(f64, DMatrix<f64>)> = None;
    let outcome = backtracking_search(
        |alpha| {
            let candidate = set.retract(&(omega + dir * alpha), rng)?;
            let v = objective.evaluate(&candidate, batch, false)?.value;
            last = Some((alpha, candidate));
            Ok(v)
        },
        f0,
        slope,
        initial_step,
        &cfg.line_search,
    )?;
    match outcome {
        LineSearch::Accepted { step, value, .. } if value < f0 => {
            let (alpha, candidate) = last.expect("accepted step was evaluated");
            debug_assert_eq!(alpha, step);
            Ok(Some((step, candidate)))
        }
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Evaluation;

    /// `f(Ω) = −Σ_i (c_iᵀ ω_i)`, minimized on the sphere at `ω_i = c_i / |c_i|`.
    struct Linear {
        c: DMatrix<f64>,
    }

    impl Objective for Linear {
        fn batches(&self) -> usize {
            1
        }

        fn evaluate(&self, omega: &DMatrix<f64>, _batch: usize, with_grad: bool) -> Result<Evaluation> {
            let value = -omega.dot(&self.c);
            Ok(Evaluation {
                value,
                terms: Terms { g: value, ..Terms::default() },
                grad: with_grad.then(|| -self.c.clone()),
            })
        }
    }

    #[test]
    fn retract_keeps_feasible_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = FeasibleSet::sphere(3);
        let row = DMatrix::from_row_slice(1, 3, &[0.6, 0.0, 0.8]);
        let out = set.retract(&row, &mut rng).unwrap();
        assert!((out - row).amax() < 1e-12);
    }

    #[test]
    fn retract_redraws_rows_inside_the_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let set = FeasibleSet::new(v, DMatrix::identity(3, 3)).unwrap();
        let row = DMatrix::from_row_slice(1, 3, &[2.0, 0.0, 0.0]);
        let out = set.retract(&row, &mut rng).unwrap();
        assert!(out[(0, 0)].abs() < 1e-12);
        assert!((out.row(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn retract_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = DMatrix::from_element(5, 1, 1.0 / 5f64.sqrt());
        let set = FeasibleSet::new(v, DMatrix::identity(5, 5)).unwrap();
        let raw = DMatrix::from_fn(7, 5, |_, _| StandardNormal.sample(&mut rng));
        let out = set.retract(&raw, &mut rng).unwrap();
        assert!(FeasibleSet::unit_norm_error(&out) < 1e-10);
        assert!(set.null_violation(&out) < 1e-10);
    }

    #[test]
    fn first_direction_is_steepest_descent() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let (d, beta) = cg_direction(&g, None, &g);
        assert_eq!(d, -&g);
        assert_eq!(beta, 0.0);
        let (d, beta) = cg_direction(&g, Some((&g, &DMatrix::from_row_slice(1, 2, &[5.0, 5.0]))), &g);
        assert_eq!(beta, 0.0);
        assert_eq!(d, -g);
    }

    #[test]
    fn conjugate_directions_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut normal = |r, c| DMatrix::from_fn(r, c, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        for _ in 0..200 {
            let g = normal(3, 4);
            let gp = normal(3, 4);
            let dp = normal(3, 4) * 10.0;
            let (d, _) = cg_direction(&g, Some((&gp, &dp)), &g);
            assert!(inner(&d, &g) < 0.0);
        }
    }

    #[test]
    fn armijo_step_on_a_quadratic() {
        // phi(α) = (α − 0.3)², f0 = 0.09, slope −0.6: admissible for α ≤ 2(0.3) − 2c₁(0.3) = 0.59994
        let cfg = LineSearchConfig::default();
        let out = backtracking_search(|a| Ok((a - 0.3) * (a - 0.3)), 0.09, -0.6, 1.0, &cfg).unwrap();
        let LineSearch::Accepted { step, shrinks, .. } = out else { panic!("rejected") };
        let upper = 0.6 - 2.0 * cfg.sufficient_decrease * 0.3;
        assert!(step <= upper && step > 0.0);
        // the previous trial step lay outside the interval
        assert!(step / cfg.shrink > upper);
        assert_eq!(shrinks, 1);
    }

    #[test]
    fn zero_slope_is_rejected_and_linear_decrease_accepts_unit_step() {
        let cfg = LineSearchConfig::default();
        let out = backtracking_search(|_| Ok(0.0), 0.0, 0.0, 1.0, &cfg).unwrap();
        assert_eq!(out, LineSearch::Rejected);
        let out = backtracking_search(|a| Ok(1.0 - a), 1.0, -1.0, 1.0, &cfg).unwrap();
        assert_eq!(out, LineSearch::Accepted { step: 1.0, value: 0.0, shrinks: 0 });
    }

    #[test]
    fn stationary_start_is_kept() {
        let c = DMatrix::from_row_slice(2, 3, &[0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let init = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let report =
            learn_dictionary(&init, &Linear { c }, &FeasibleSet::sphere(3), &OptimizerConfig::default()).unwrap();
        assert!((report.omega - init).amax() < 1e-12);
    }

    #[test]
    fn linear_objective_converges_monotonically() {
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let init = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0]);
        let obj = Linear { c: c.clone() };
        let report = learn_dictionary(&init, &obj, &FeasibleSet::sphere(3), &OptimizerConfig::default()).unwrap();
        for w in report.records.windows(2) {
            if w[1].iter > 0 {
                assert!(w[1].value <= w[0].value);
            }
        }
        let mut target = c.clone();
        for mut r in target.row_iter_mut() {
            let n = r.norm();
            r /= n;
        }
        assert!((report.omega - target).amax() < 1e-4);
        assert!(report.final_value <= report.initial_value);
    }
}
