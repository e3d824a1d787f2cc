//! Per-atom soft-threshold selection by a one-dimensional scale search.
//!
//! Thresholds are `λ_j = ρ / σ_j` for information-preserving atoms and
//! `λ_j = ρ σ_j` for clustering atoms, where `σ_j` is the spread of atom `j`'s
//! responses. The scale `ρ` is picked from a grid by how well a least-squares
//! map from the thresholded responses reproduces the targets.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::model::layer::threshold_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    /// `λ_j = ρ / σ_j`.
    Inverse,
    /// `λ_j = ρ σ_j`.
    Proportional,
}

/// `{a · 10^b : a = 1..9, b = min_exp..=max_exp}`, ascending.
pub fn search_grid(min_exp: i32, max_exp: i32) -> Result<Vec<f64>> {
    if min_exp > max_exp {
        return Err(Error::arg(format!("grid exponents {min_exp}..{max_exp} are reversed")));
    }
    let mut out = Vec::new();
    for b in min_exp..=max_exp {
        for a in 1..=9 {
            out.push(a as f64 * 10f64.powi(b));
        }
    }
    Ok(out)
}

pub fn default_grid() -> Vec<f64> {
    search_grid(-6, 0).expect("fixed exponents")
}

/// Thresholds for scale `rho`; atoms with `σ = 0` get 0.
pub fn thresholds_from_scales(sigma: &[f64], rho: f64, rule: ThresholdRule) -> Vec<f64> {
    sigma
        .iter()
        .map(|&s| {
            if !(s > 0.0) {
                0.0
            } else {
                match rule {
                    ThresholdRule::Inverse => rho / s,
                    ThresholdRule::Proportional => rho * s,
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ThresholdSearch {
    pub rho: f64,
    pub lambdas: Vec<f64>,
    pub score: f64,
    /// `(ρ, score)` for every grid point.
    pub scores: Vec<(f64, f64)>,
    /// `G` at the chosen scale, over the atoms with `σ > 0`.
    pub coefficients: DMatrix<f64>,
    /// `targets − G Z` at the chosen scale.
    pub residual: DMatrix<f64>,
}

/// Picks `ρ` from `grid` minimizing `‖T − G Z‖²_F` with `Z = S_{ρλ⊗1}(responses)`
/// and `G` the least-squares fit. Ties go to the smaller `ρ`.
///
/// `responses` has `positions` rows per atom (row `a + P j`). Atoms with `σ = 0`
/// are left out of `Z` and receive a zero threshold.
pub fn threshold_scale_search(
    responses: &DMatrix<f64>,
    positions: usize,
    targets: &DMatrix<f64>,
    sigma: &[f64],
    grid: &[f64],
    rule: ThresholdRule,
) -> Result<ThresholdSearch> {
    if grid.is_empty() {
        return Err(Error::arg("threshold search grid is empty"));
    }
    if grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("threshold grid must be positive and strictly increasing"));
    }
    if responses.nrows() != positions * sigma.len() {
        return Err(Error::dim(format!(
            "{} response rows for {} atoms at {positions} positions",
            responses.nrows(),
            sigma.len()
        )));
    }
    if responses.ncols() != targets.ncols() {
        return Err(Error::dim("responses and targets differ in sample count"));
    }
    let live: Vec<usize> = (0..sigma.len()).filter(|&j| sigma[j] > 0.0).collect();
    if live.len() < sigma.len() {
        warn!("{} atoms with constant responses left out of the threshold search", sigma.len() - live.len());
    }
    let rows: Vec<usize> = live.iter().flat_map(|&j| j * positions..(j + 1) * positions).collect();
    let base = responses.select_rows(rows.iter());
    let live_sigma: Vec<f64> = live.iter().map(|&j| sigma[j]).collect();

    let mut best: Option<ThresholdSearch> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &rho in grid {
        let lambdas = thresholds_from_scales(&live_sigma, rho, rule);
        let mut z = base.clone();
        threshold_rows(&mut z, positions, &lambdas)?;
        let fit = least_squares(targets, &z);
        let residual = targets - &fit.coefficients * &z;
        let score = residual.norm_squared();
        scores.push((rho, score));
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(ThresholdSearch {
                rho,
                lambdas: thresholds_from_scales(sigma, rho, rule),
                score,
                scores: Vec::new(),
                coefficients: fit.coefficients,
                residual,
            });
        }
    }
    let mut best = best.expect("grid is nonempty");
    best.scores = scores;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 63);
        assert!((g[0] - 1e-6).abs() < 1e-18);
        assert!((g[62] - 9.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn exact_linear_targets_pick_the_smallest_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = DMatrix::from_fn(6, 200, |_, _| rng.random_range(-1.0..1.0));
        let g0 = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
        let targets = &g0 * &f;
        let grid = [1e-9, 0.1, 0.5];
        let out =
            threshold_scale_search(&f, 2, &targets, &[1.0, 1.0, 1.0], &grid, ThresholdRule::Proportional).unwrap();
        assert_eq!(out.rho, 1e-9);
        assert!(out.score < 1e-12);
    }

    #[test]
    fn all_zero_features_tie_to_the_smallest_scale() {
        let f = DMatrix::from_fn(2, 10, |r, c| 0.01 * ((r + c) as f64).sin());
        let targets = DMatrix::from_fn(1, 10, |_, c| c as f64);
        let out =
            threshold_scale_search(&f, 1, &targets, &[1.0, 1.0], &[10.0, 20.0, 30.0], ThresholdRule::Proportional)
                .unwrap();
        assert_eq!(out.rho, 10.0);
        for (_, s) in &out.scores {
            assert_eq!(*s, targets.norm_squared());
        }
    }

    #[test]
    fn singleton_grid_and_rules() {
        let f = DMatrix::from_fn(2, 5, |r, c| (r + c) as f64);
        let t = DMatrix::from_fn(1, 5, |_, c| c as f64);
        let out = threshold_scale_search(&f, 1, &t, &[2.0, 0.0], &[0.7], ThresholdRule::Inverse).unwrap();
        assert_eq!(out.rho, 0.7);
        assert_eq!(out.lambdas, vec![0.35, 0.0]);
        assert!(threshold_scale_search(&f, 1, &t, &[1.0, 1.0], &[], ThresholdRule::Inverse).is_err());
        assert!(threshold_scale_search(&f, 1, &t, &[1.0, 1.0], &[0.2, 0.1], ThresholdRule::Inverse).is_err());
    }

    #[test]
    fn threshold_order_follows_the_rule() {
        let sigma = [0.5, 2.0, 1.0, 0.1];
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        };
        let inv = thresholds_from_scales(&sigma, 0.3, ThresholdRule::Inverse);
        let prop = thresholds_from_scales(&sigma, 0.3, ThresholdRule::Proportional);
        let mut rev = order(&sigma);
        rev.reverse();
        assert_eq!(order(&inv), rev);
        assert_eq!(order(&prop), order(&sigma));
    }
}
