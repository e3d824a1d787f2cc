//! Seeded fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use deepcam::model::{DeepCamModel, LayerSpec, TrainedLayer};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Rows scaled to unit norm.
pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut a = gaussian(rows, cols, seed);
    for mut row in a.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    a
}

/// Two analysis layers of 16 and 48 filters on 3x3 windows, 3x3 synthesis, x2.
pub fn two_layer_model(seed: u64) -> DeepCamModel {
    let spec1 = LayerSpec { index: 1, side: 3, in_channels: 1, atoms: 16, ipad_atoms: 4, super_side: 7 };
    let spec2 = LayerSpec { index: 2, side: 3, in_channels: 16, atoms: 48, ipad_atoms: 6, super_side: 5 };
    let l1 = TrainedLayer::new(spec1, unit_rows(16, 9, seed), vec![1e-3; 16]).unwrap();
    let l2 = TrainedLayer::new(spec2, unit_rows(48, 144, seed + 1), vec![1e-2; 48]).unwrap();
    DeepCamModel::new(2, vec![l1, l2], 3, gaussian(4, 9 * 48, seed + 2) / 400.0).unwrap()
}
