use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepcam::imaging::{build_training_pairs, degrade, modcrop, LumaImage, PairConfig, TrainingPairs};
use deepcam::model::sizing::anchor_offsets;
use deepcam::model::{train_model, DeepCamModel, LayerSpec, TrainConfig, TrainedLayer};
use deepcam::{ConvAnalysisDictionary, FeatureTensor, Geometry};

fn texture(rows: usize, cols: usize, seed: u64) -> LumaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.random_range(0.2..0.6), rng.random_range(0.1..0.5));
    LumaImage::new(DMatrix::from_fn(rows, cols, |r, c| {
        let v = 128.0 + 60.0 * (a * r as f64).sin() * (b * c as f64).cos() + rng.random_range(-20.0..20.0);
        v.round().clamp(0.0, 255.0)
    }))
    .unwrap()
}

fn random_model(rng: &mut ChaCha8Rng) -> DeepCamModel {
    let spec1 = LayerSpec { index: 1, side: 3, in_channels: 1, atoms: 5, ipad_atoms: 3, super_side: 7 };
    let spec2 = LayerSpec { index: 2, side: 3, in_channels: 5, atoms: 6, ipad_atoms: 4, super_side: 5 };
    let mut rand = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let l1 = TrainedLayer::new(spec1, rand(5, 9), vec![0.05, 0.0, 0.1, 0.2, 0.3]).unwrap();
    let l2 = TrainedLayer::new(spec2, rand(6, 45), vec![0.01, 0.02, 0.0, 0.05, 0.1, 0.2]).unwrap();
    DeepCamModel::new(2, vec![l1, l2], 3, rand(4, 54)).unwrap()
}

#[test]
fn training_targets_sit_where_inference_writes_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let images = vec![texture(41, 38, 1), texture(30, 44, 2)];
    let cfg =
        PairConfig { scale: 2, sides: vec![3, 3, 3], super_patches: 40, small_patches: 40, seed: 3, quantize: true };
    let pairs = build_training_pairs(&images, &cfg).unwrap();
    assert_eq!(pairs.super_side, 7);
    let model = random_model(&mut rng);
    let anchor = *anchor_offsets(&cfg.sides).last().unwrap();
    assert_eq!(anchor, 3);

    let lrs: Vec<DMatrix<f64>> =
        images.iter().map(|i| degrade(&modcrop(&i.pixels, 2), 2, true).unwrap() / 255.0).collect();
    let hrs: Vec<DMatrix<f64>> = images.iter().map(|i| modcrop(&i.pixels, 2) / 255.0).collect();
    let outputs: Vec<DMatrix<f64>> = lrs.iter().map(|lr| model.super_resolve(lr).unwrap()).collect();

    for (j, o) in pairs.origins.iter().enumerate() {
        let patch = DMatrix::from_column_slice(7, 7, pairs.super_patches.column(j).as_slice());
        assert_eq!(patch, lrs[o.image].view((o.row, o.col), (7, 7)).into_owned());
        let local = model.predict(&FeatureTensor::from_matrix(&patch).unwrap()).unwrap();
        assert_eq!((local.rows(), local.cols(), local.channels()), (1, 1, 4));
        for k in 0..4 {
            let (r, c) = (2 * (o.row + anchor) + k / 2, 2 * (o.col + anchor) + k % 2);
            assert_eq!(pairs.targets[(k, j)], hrs[o.image][(r, c)]);
            assert!((outputs[o.image][(r, c)] - local.get(0, 0, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn analysis_operator_agrees_with_the_filter_bank_on_multichannel_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (rows, cols, ch, p, m) = (6, 8, 3, 3, 4);
    let omega = DMatrix::from_fn(m, p * p * ch, |_, _| rng.random_range(-1.0..1.0));
    let x: Vec<f64> = (0..rows * cols * ch).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dict = ConvAnalysisDictionary::new(omega.clone(), Geometry::new(rows, cols, ch, p, p).unwrap()).unwrap();
    let tensor = FeatureTensor::new(rows, cols, ch, x.clone()).unwrap();
    let bank = deepcam::structured::conv_bank_valid(&omega, p, &tensor).unwrap();
    let dense = dict.materialize().unwrap() * DMatrix::from_column_slice(x.len(), 1, &x);
    for ((a, b), c) in dict.apply(&x).unwrap().iter().zip(bank.data()).zip(dense.iter()) {
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
    }
}

#[test]
fn trained_model_and_pairs_survive_disk_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<LumaImage> = (0..3).map(|s| texture(48, 48, s)).collect();
    let mut train = TrainConfig {
        filter_sides: vec![3],
        filters: vec![8],
        search_samples: 600,
        small_patches: 1500,
        ..TrainConfig::default()
    };
    train.optimizer.max_batches = 2;
    let cfg =
        PairConfig { scale: 2, sides: train.sides(), super_patches: 800, small_patches: 1500, seed: 5, quantize: true };
    let pairs = build_training_pairs(&images, &cfg).unwrap();
    pairs.save(dir.path().join("pairs.bin")).unwrap();
    let reloaded = TrainingPairs::load(dir.path().join("pairs.bin")).unwrap();
    assert_eq!(reloaded, pairs);

    let report = train_model(&reloaded, &train).unwrap();
    let path = dir.path().join("m.dcam");
    report.model.save(&path).unwrap();
    let model = DeepCamModel::load(&path).unwrap();
    assert_eq!(model, report.model);
    let lr = DMatrix::from_fn(13, 17, |r, c| ((r + c) % 5) as f64 / 5.0);
    assert_eq!(model.super_resolve(&lr).unwrap().shape(), (26, 34));
    assert_eq!(model.super_resolve(&lr).unwrap(), report.model.super_resolve(&lr).unwrap());
}
