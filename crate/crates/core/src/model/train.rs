//! Layer-by-layer training of the analysis model.
//!
//! Each layer gets information-preserving atoms learned on small patches of its
//! input, clustering atoms learned in the space of HR estimates and mapped back
//! through a per-layer synthesis dictionary, and per-atom thresholds from a
//! scale search on super-patch responses. The synthesis layer is a final
//! least-squares fit.

use log::{info, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::convgoal::{learn_dictionary, FeasibleSet, LearnReport, OptimizerConfig};
use crate::error::{Error, Result};
use crate::imaging::dataset::{extract_windows, layer_rng, sample_windows, TrainingPairs, WindowSample};
use crate::linalg::{least_squares, Regression};
use crate::model::layer::{layer_responses, threshold_rows, TrainedLayer};
use crate::model::network::DeepCamModel;
use crate::model::sizing::{anchor_offsets, plan_layers, LayerPlan, LayerSpec};
use crate::model::thresholds::{default_grid, threshold_scale_search, ThresholdRule};
use crate::objectives::{laplacian_scales, DictionaryObjective, InfoTerm, ObjectiveConfig};
use crate::structured::{ConvAnalysisDictionary, Geometry};
use crate::subspace::{
    null_space, signal_subspace, subsample_columns, Projectors, DEFAULT_SUBSPACE_ENERGY, MAX_SUBSPACE_COLUMNS,
};

/// Objective weights as functions of atom length `n` and atom count `m`:
/// `ν = nu_per_len · n`, `κ = kappa_per_atom · m`, `υ = upsilon_per_atom · m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRule {
    pub nu_per_len: f64,
    pub kappa_per_atom: f64,
    pub upsilon_per_atom: f64,
    pub mu: f64,
}

impl WeightRule {
    pub fn ipad_default() -> Self {
        let c = ObjectiveConfig::ipad(1, 1);
        Self { nu_per_len: c.nu, kappa_per_atom: c.kappa, upsilon_per_atom: c.upsilon, mu: c.mu }
    }

    pub fn cad_default() -> Self {
        let c = ObjectiveConfig::cad(1, 1);
        Self { nu_per_len: c.nu, kappa_per_atom: c.kappa, upsilon_per_atom: c.upsilon, mu: c.mu }
    }

    pub fn config(&self, atom_len: usize, atoms: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            nu: self.nu_per_len * atom_len as f64,
            kappa: self.kappa_per_atom * atoms as f64,
            upsilon: self.upsilon_per_atom * atoms as f64,
            mu: self.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Filter sides `p_1..p_L` of the analysis layers.
    pub filter_sides: Vec<usize>,
    /// Filter counts `d_1..d_L`.
    pub filters: Vec<usize>,
    pub synthesis_side: usize,
    pub scale: usize,
    /// Turn too few information-preserving atoms into a warning.
    pub allow_bound_violation: bool,
    /// Add information-preserving atoms beyond the counting bound until a
    /// generic dictionary of that size has full rank on the first super-patch.
    pub ipad_rank_check: bool,
    pub subspace_energy: f64,
    /// Column batches of each dictionary objective.
    pub batches: usize,
    pub optimizer: OptimizerConfig,
    pub ipad: WeightRule,
    pub cad: WeightRule,
    /// Scale grid for the threshold search.
    pub grid: Vec<f64>,
    /// Super-patches used by the threshold search.
    pub search_samples: usize,
    /// Small patches per layer beyond the first.
    pub small_patches: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            filter_sides: vec![3],
            filters: vec![16],
            synthesis_side: 3,
            scale: 2,
            allow_bound_violation: false,
            ipad_rank_check: true,
            subspace_energy: DEFAULT_SUBSPACE_ENERGY,
            batches: 10,
            optimizer: OptimizerConfig::default(),
            ipad: WeightRule::ipad_default(),
            cad: WeightRule::cad_default(),
            grid: default_grid(),
            search_samples: 8000,
            small_patches: 30_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Sides `p_1..p_{L+1}` including the synthesis layer.
    pub fn sides(&self) -> Vec<usize> {
        let mut s = self.filter_sides.clone();
        s.push(self.synthesis_side);
        s
    }

    pub fn plan(&self) -> Result<LayerPlan> {
        plan_layers(self.scale, &self.filter_sides, &self.filters, self.synthesis_side, self.allow_bound_violation)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.subspace_energy > 0.0 && self.subspace_energy <= 1.0) {
            return Err(Error::arg(format!("subspace energy must lie in (0, 1], got {}", self.subspace_energy)));
        }
        if self.batches == 0 || self.search_samples < 2 || self.small_patches < 2 {
            return Err(Error::arg("batch, search and patch counts must be positive"));
        }
        for (name, r) in [("ipad", &self.ipad), ("cad", &self.cad)] {
            if !(r.nu_per_len > 0.0) || [r.kappa_per_atom, r.upsilon_per_atom, r.mu].iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::arg(format!("{name} weights must be nonnegative with positive nu")));
            }
        }
        Ok(())
    }
}

/// Information-preserving atoms of one layer.
#[derive(Debug, Clone)]
pub struct IpadResult {
    pub omega: DMatrix<f64>,
    pub report: LearnReport,
    /// Basis vectors kept in the information term.
    pub info_rank: usize,
    /// Dimension of the null space of the small patches.
    pub null_dim: usize,
}

/// Learns `atoms` information-preserving atoms.
///
/// `small` holds `p × p × c` patches for the sparsity term and null space;
/// `supers` holds `super_side × super_side × c` patches whose signal subspace
/// feeds the information term and the averaging projector.
#[allow(clippy::too_many_arguments)]
pub fn learn_ipad(
    small: &DMatrix<f64>,
    supers: &DMatrix<f64>,
    super_side: usize,
    channels: usize,
    side: usize,
    atoms: usize,
    weights: &WeightRule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<IpadResult> {
    let geometry = Geometry::square(super_side, channels, side)?;
    let n = geometry.atom_len();
    if small.nrows() != n {
        return Err(Error::dim(format!("small patches have length {}, atoms {n}", small.nrows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = signal_subspace(&subsample_columns(supers, MAX_SUBSPACE_COLUMNS, &mut rng), cfg.subspace_energy)?;
    let projectors = Projectors::new(&basis, &geometry)?;
    let null = null_space(&subsample_columns(small, MAX_SUBSPACE_COLUMNS, &mut rng));
    let null_dim = null.ncols();
    if null_dim > 0 {
        info!("small patches have a {null_dim}-dimensional null space");
    }
    let set = FeasibleSet::new(null, projectors.averaged)?;
    let init = set.random_point(atoms, &mut rng)?;
    let reachable = analysis_rank(&init, &geometry)?;
    if basis.rank() > reachable {
        warn!(
            "information term keeps {reachable} of {} subspace directions ({atoms} atoms at {} positions)",
            basis.rank(),
            geometry.positions()
        );
    }
    let kept = basis.truncate(reachable);
    let objective_cfg = weights.config(n, atoms);
    let info = if objective_cfg.kappa > 0.0 { Some(InfoTerm::new(&kept.signal, &geometry)?) } else { None };
    let objective = DictionaryObjective::ipad(objective_cfg, info, small, cfg.batches)?;
    let opt = OptimizerConfig { seed, ..cfg.optimizer };
    let report = learn_dictionary(&init, &objective, &set, &opt)?;
    Ok(IpadResult { omega: report.omega.clone(), report, info_rank: kept.rank(), null_dim })
}

/// Rank of the analysis operator of `omega` on signals of `geometry`.
///
/// For a generic dictionary this is the largest subspace the information term
/// can keep finite; it can fall short of `positions × atoms` because filters
/// share annihilated exponential signals.
pub fn analysis_rank(omega: &DMatrix<f64>, geometry: &Geometry) -> Result<usize> {
    let h = ConvAnalysisDictionary::new(omega.clone(), geometry.clone())?.materialize()?;
    let sv = h.singular_values();
    let top = sv.max();
    Ok(sv.iter().filter(|&&v| v > 1e-8 * top).count())
}

/// Smallest information-preserving count, starting from the counting bound,
/// whose analysis operator has generic rank at least `target` on the layer's
/// super-patches. Capped at the layer's filter count.
pub fn realizable_ipad_atoms(spec: &LayerSpec, target: usize, seed: u64) -> Result<usize> {
    let geometry = Geometry::square(spec.super_side, spec.in_channels, spec.side)?;
    let target = target.min(geometry.signal_len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = spec.ipad_atoms;
    while m < spec.atoms {
        if m * geometry.positions() >= target {
            let probe = DMatrix::from_fn(m, geometry.atom_len(), |_, _| StandardNormal.sample(&mut rng));
            if analysis_rank(&probe, &geometry)? >= target {
                break;
            }
        }
        m += 1;
    }
    Ok(m)
}

/// Clustering atoms of one layer.
#[derive(Debug, Clone)]
pub struct CadResult {
    /// Atoms in the HR estimate space.
    pub psi: DMatrix<f64>,
    /// `Ψ D` with unit rows, atoms on the layer input.
    pub omega: DMatrix<f64>,
    pub report: LearnReport,
}

/// Learns `atoms` clustering atoms on HR estimates `Ŷ = D X` with residuals
/// `E = Y − Ŷ`, then maps them through `synthesis` (`D`) to the layer input.
pub fn learn_cad(
    estimate: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    synthesis: &DMatrix<f64>,
    atoms: usize,
    weights: &WeightRule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CadResult> {
    let t = estimate.nrows();
    if synthesis.nrows() != t {
        return Err(Error::dim("synthesis rows differ from the estimate length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centered = subsample_columns(estimate, MAX_SUBSPACE_COLUMNS, &mut rng);
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let basis = signal_subspace(&centered, cfg.subspace_energy)?;
    let projectors = Projectors::new(&basis, &Geometry::line(t, t)?)?;
    let kept = basis.truncate(atoms);
    let objective_cfg = weights.config(t, atoms);
    let info = if objective_cfg.kappa > 0.0 { Some(InfoTerm::dense(&kept.signal)?) } else { None };
    let objective = DictionaryObjective::cad(objective_cfg, info, estimate, residual, cfg.batches)?;
    let ones = DMatrix::from_element(t, 1, 1.0 / (t as f64).sqrt());
    let set = FeasibleSet::new(ones, projectors.averaged)?;
    let init = set.random_point(atoms, &mut rng)?;
    let opt = OptimizerConfig { seed, ..cfg.optimizer };
    let report = learn_dictionary(&init, &objective, &set, &opt)?;
    let psi = report.omega.clone();
    let mut omega = &psi * synthesis;
    for (j, mut row) in omega.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 1e-12) {
            return Err(Error::numerical(format!("clustering atom {} vanishes on the layer input", j + 1)));
        }
        row /= norm;
    }
    Ok(CadResult { psi, omega, report })
}

/// What training produced for one layer, apart from the layer itself.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub index: usize,
    pub ipad: LearnReport,
    pub cad: Option<LearnReport>,
    pub ipad_rho: f64,
    pub cad_rho: Option<f64>,
    /// `(ρ, score)` of both searches.
    pub ipad_scores: Vec<(f64, f64)>,
    pub cad_scores: Vec<(f64, f64)>,
    pub info_rank: usize,
    pub null_dim: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: DeepCamModel,
    pub plan: LayerPlan,
    pub layers: Vec<LayerReport>,
    /// Whether the final least-squares fit needed the ridge fallback.
    pub synthesis_ridged: bool,
}

fn stage_seed(seed: u64, layer: usize, stage: u64) -> u64 {
    seed ^ (2 * layer as u64 + stage + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn fit(targets: &DMatrix<f64>, features: &DMatrix<f64>, what: &str) -> Regression {
    let r = least_squares(targets, features);
    if r.ridged {
        warn!("{what}: singular Gram matrix, used ridge regularization");
    }
    r
}

/// Trains every layer in order and fits the synthesis layer.
pub fn train_model(pairs: &TrainingPairs, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut plan = cfg.plan()?;
    if cfg.ipad_rank_check {
        let first = plan.spec.super_side().pow(2);
        for spec in &mut plan.spec.layers {
            let m = realizable_ipad_atoms(spec, first, stage_seed(cfg.seed, spec.index, 2))?;
            if m > spec.ipad_atoms {
                warn!(
                    "layer {}: {} information-preserving atoms cannot span the {first}-dimensional super-patch; using {m}",
                    spec.index, spec.ipad_atoms
                );
                spec.ipad_atoms = m;
            }
        }
    }
    let sides = cfg.sides();
    if pairs.config.scale != cfg.scale || pairs.config.sides != sides {
        return Err(Error::arg(format!(
            "training pairs were built for scale {} and sides {:?}, model needs scale {} and sides {:?}",
            pairs.config.scale, pairs.config.sides, cfg.scale, sides
        )));
    }
    let layout = pairs.layout();
    let offsets = anchor_offsets(&sides);
    let search_cols = cfg.search_samples.min(pairs.super_patches.ncols());
    let search_targets = pairs.targets.columns(0, search_cols).into_owned();

    let mut features = pairs.super_patches.clone();
    let mut layers = Vec::with_capacity(plan.spec.layers.len());
    let mut reports = Vec::with_capacity(plan.spec.layers.len());
    for spec in &plan.spec.layers {
        let i = spec.index;
        info!(
            "layer {i}: {}x{} filters, {} information-preserving and {} clustering atoms",
            spec.side,
            spec.side,
            spec.ipad_atoms,
            spec.cad_atoms()
        );
        let (layer, report) = train_layer(pairs, cfg, spec, &features, &offsets, &search_targets, &layout)
            .map_err(|e| e.context(format!("layer {i}")))?;
        let mut next = layer_responses(&layer.omega, &features, spec.super_side, spec.in_channels, spec.side)?;
        threshold_rows(&mut next, spec.window_side().pow(2), &layer.lambdas)?;
        features = next;
        layers.push(layer);
        reports.push(report);
    }

    let synthesis = fit(&pairs.targets, &features, "synthesis layer");
    let model = DeepCamModel::new(cfg.scale, layers, cfg.synthesis_side, synthesis.coefficients)?;
    Ok(TrainReport { model, plan, layers: reports, synthesis_ridged: synthesis.ridged })
}

fn train_layer(
    pairs: &TrainingPairs,
    cfg: &TrainConfig,
    spec: &LayerSpec,
    features: &DMatrix<f64>,
    offsets: &[usize],
    search_targets: &DMatrix<f64>,
    layout: &crate::imaging::dataset::HrLayout,
) -> Result<(TrainedLayer, LayerReport)> {
    let i = spec.index;
    let (samples, small): (Vec<WindowSample>, DMatrix<f64>) = if i == 1 {
        (pairs.small.samples.clone(), pairs.small.patches.clone())
    } else {
        let per_axis = spec.window_side();
        let samples =
            sample_windows(features.ncols(), per_axis, cfg.small_patches, &mut layer_rng(pairs.config.seed, i));
        let small = extract_windows(features, spec.super_side, spec.in_channels, spec.side, &samples)?;
        (samples, small)
    };
    let blocks = layout.blocks(&pairs.hr_blocks, offsets[i - 1], spec.side, &samples)?;

    let ipad = learn_ipad(
        &small,
        features,
        spec.super_side,
        spec.in_channels,
        spec.side,
        spec.ipad_atoms,
        &cfg.ipad,
        cfg,
        stage_seed(cfg.seed, i, 0),
    )?;
    info!(
        "layer {i}: information-preserving atoms done, f {:.4e} -> {:.4e}",
        ipad.report.initial_value, ipad.report.final_value
    );

    let positions = spec.window_side().pow(2);
    let search_features = features.columns(0, search_targets.ncols()).into_owned();
    let scales_i = laplacian_scales(&ipad.omega, &small)?;
    let resp_i = layer_responses(&ipad.omega, &search_features, spec.super_side, spec.in_channels, spec.side)?;
    let search_i =
        threshold_scale_search(&resp_i, positions, search_targets, &scales_i.sigma, &cfg.grid, ThresholdRule::Inverse)?;
    info!("layer {i}: information-preserving scale {:.3e}", search_i.rho);

    let mut omega = ipad.omega.clone();
    let mut lambdas = search_i.lambdas.clone();
    let mut cad_report = None;
    let mut cad_rho = None;
    let mut cad_scores = Vec::new();
    if spec.cad_atoms() > 0 {
        let d = fit(&blocks, &small, "per-layer synthesis");
        let estimate = &d.coefficients * &small;
        let residual = &blocks - &estimate;
        let cad = learn_cad(
            &estimate,
            &residual,
            &d.coefficients,
            spec.cad_atoms(),
            &cfg.cad,
            cfg,
            stage_seed(cfg.seed, i, 1),
        )?;
        info!("layer {i}: clustering atoms done, f {:.4e} -> {:.4e}", cad.report.initial_value, cad.report.final_value);
        let scales_c = laplacian_scales(&cad.omega, &small)?;
        let resp_c = layer_responses(&cad.omega, &search_features, spec.super_side, spec.in_channels, spec.side)?;
        let search_c = threshold_scale_search(
            &resp_c,
            positions,
            &search_i.residual,
            &scales_c.sigma,
            &cfg.grid,
            ThresholdRule::Proportional,
        )?;
        info!("layer {i}: clustering scale {:.3e}", search_c.rho);
        omega = stack_rows(&omega, &cad.omega);
        lambdas.extend_from_slice(&search_c.lambdas);
        cad_rho = Some(search_c.rho);
        cad_scores = search_c.scores;
        cad_report = Some(cad.report);
    }
    let layer = TrainedLayer::new(*spec, omega, lambdas)?;
    let report = LayerReport {
        index: i,
        ipad: ipad.report,
        cad: cad_report,
        ipad_rho: search_i.rho,
        cad_rho,
        ipad_scores: search_i.scores,
        cad_scores,
        info_rank: ipad.info_rank,
        null_dim: ipad.null_dim,
    };
    Ok((layer, report))
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}
