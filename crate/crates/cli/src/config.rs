//! Run configuration: one `key = value` per line, `#` starts a comment.
//!
//! Lists are comma separated (`filter_sides = 3, 3`). Relative paths are taken
//! relative to the directory of the configuration file. Unknown keys are errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deepcam::imaging::PairConfig;
use deepcam::model::thresholds::search_grid;
use deepcam::model::TrainConfig;
use deepcam::Error;

pub const SEED_ENV: &str = "DEEPCAM_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Directory of HR training images.
    pub train_dir: Option<PathBuf>,
    /// Prepared training pairs to use instead of `train_dir`.
    pub pairs: Option<PathBuf>,
    pub super_patches: usize,
    pub small_patches: usize,
    pub quantize: bool,
    pub grid_min_exp: i32,
    pub grid_max_exp: i32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            small_patches: train.small_patches,
            train,
            train_dir: None,
            pairs: None,
            super_patches: 20_000,
            quantize: true,
            grid_min_exp: -6,
            grid_max_exp: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value.parse().map_err(|_| invalid(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, Error> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

impl RunConfig {
    pub fn parse_str(text: &str, base: Option<&Path>) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| invalid(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(invalid(format!("line {}: {key} given twice", n + 1)));
            }
            cfg.set(key, value, base).map_err(|e| e.context(format!("line {}", n + 1)))?;
        }
        cfg.small_patches = cfg.train.small_patches;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.display())))?;
        Ok(Self::parse_str(&text, path.parent())?)
    }

    fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), Error> {
        let t = &mut self.train;
        let o = &mut t.optimizer;
        let path = |v: &str| match base {
            Some(b) if Path::new(v).is_relative() => b.join(v),
            _ => PathBuf::from(v),
        };
        match key {
            "scale" => t.scale = parse(key, value)?,
            "filter_sides" => t.filter_sides = parse_list(key, value)?,
            "filters" => t.filters = parse_list(key, value)?,
            "synthesis_side" => t.synthesis_side = parse(key, value)?,
            "allow_bound_violation" => t.allow_bound_violation = parse_bool(key, value)?,
            "ipad_rank_check" => t.ipad_rank_check = parse_bool(key, value)?,
            "subspace_energy" => t.subspace_energy = parse(key, value)?,
            "batches" => t.batches = parse(key, value)?,
            "iters_per_batch" => o.iters_per_batch = parse(key, value)?,
            "max_batches" => o.max_batches = parse(key, value)?,
            "halt_tol" => o.halt_tol = parse(key, value)?,
            "initial_step" => o.line_search.initial_step = parse(key, value)?,
            "step_shrink" => o.line_search.shrink = parse(key, value)?,
            "sufficient_decrease" => o.line_search.sufficient_decrease = parse(key, value)?,
            "max_shrinks" => o.line_search.max_shrinks = parse(key, value)?,
            "warm_start" => o.warm_start = parse_bool(key, value)?,
            "max_reinit" => o.max_reinit = parse(key, value)?,
            "ipad_nu" => t.ipad.nu_per_len = parse(key, value)?,
            "ipad_kappa" => t.ipad.kappa_per_atom = parse(key, value)?,
            "ipad_upsilon" => t.ipad.upsilon_per_atom = parse(key, value)?,
            "ipad_mu" => t.ipad.mu = parse(key, value)?,
            "cad_nu" => t.cad.nu_per_len = parse(key, value)?,
            "cad_kappa" => t.cad.kappa_per_atom = parse(key, value)?,
            "cad_upsilon" => t.cad.upsilon_per_atom = parse(key, value)?,
            "cad_mu" => t.cad.mu = parse(key, value)?,
            "grid_min_exp" => self.grid_min_exp = parse(key, value)?,
            "grid_max_exp" => self.grid_max_exp = parse(key, value)?,
            "search_samples" => t.search_samples = parse(key, value)?,
            "super_patches" => self.super_patches = parse(key, value)?,
            "small_patches" => t.small_patches = parse(key, value)?,
            "quantize" => self.quantize = parse_bool(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "train_dir" => self.train_dir = Some(path(value)),
            "pairs" => self.pairs = Some(path(value)),
            _ => return Err(invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `DEEPCAM_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), Error> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Checks ranges and atom-count bounds; bound warnings go to the log.
    pub fn validate(&mut self) -> Result<(), Error> {
        self.train.grid = search_grid(self.grid_min_exp, self.grid_max_exp)?;
        self.small_patches = self.train.small_patches;
        if self.super_patches == 0 {
            return Err(invalid("super_patches must be positive"));
        }
        self.train.validate()?;
        self.train.plan()?;
        Ok(())
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            scale: self.train.scale,
            sides: self.train.sides(),
            super_patches: self.super_patches,
            small_patches: self.small_patches,
            seed: self.train.seed,
            quantize: self.quantize,
        }
    }
}
