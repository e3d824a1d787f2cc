use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;

use deepcam::imaging::{load_image, save_image, LumaImage};
use deepcam::model::{DeepCamModel, LayerSpec, TrainedLayer};

fn deepcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepcam")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(sub)
}

/// Nearest-neighbour upscaler: no analysis layers, every output copies the pixel.
fn nearest_model(dir: &Path) -> PathBuf {
    let model = DeepCamModel::new(2, vec![], 1, DMatrix::from_element(4, 1, 1.0)).unwrap();
    let path = dir.join("nearest.dcam");
    model.save(&path).unwrap();
    path
}

fn one_layer_model(dir: &Path) -> PathBuf {
    let spec = LayerSpec { index: 1, side: 3, in_channels: 1, atoms: 4, ipad_atoms: 2, super_side: 5 };
    let omega = DMatrix::from_fn(4, 9, |r, c| ((r * 9 + c) as f64 * 0.7).sin());
    let layer = TrainedLayer::new(spec, omega, vec![0.01, 0.02, 0.2, 0.3]).unwrap();
    let synthesis = DMatrix::from_fn(4, 36, |r, c| ((r + 2 * c) as f64).cos() / 36.0);
    let model = DeepCamModel::new(2, vec![layer], 3, synthesis).unwrap();
    let path = dir.join("one.dcam");
    model.save(&path).unwrap();
    path
}

fn small_image(dir: &Path, name: &str, rows: usize, cols: usize) -> PathBuf {
    let img = LumaImage::new(DMatrix::from_fn(rows, cols, |r, c| ((r * 13 + c * 7) % 256) as f64)).unwrap();
    let path = dir.join(name);
    save_image(&path, &img).unwrap();
    path
}

#[test]
fn sr_doubles_the_size_and_nearest_model_copies_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let model = nearest_model(dir.path());
    let input = small_image(dir.path(), "in.pgm", 9, 14);
    let out = dir.path().join("out.pgm");
    let o = deepcam(&["sr", "--model", s(&model), "--in", s(&input), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lr = load_image(&input).unwrap();
    let hr = load_image(&out).unwrap();
    assert_eq!(hr.pixels.shape(), (18, 28));
    for r in 0..18 {
        for c in 0..28 {
            assert_eq!(hr.pixels[(r, c)], lr.pixels[(r / 2, c / 2)]);
        }
    }
}

#[test]
fn sr_processes_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let model = one_layer_model(dir.path());
    let inputs = dir.path().join("lr");
    fs::create_dir(&inputs).unwrap();
    small_image(&inputs, "a.pgm", 8, 8);
    small_image(&inputs, "b.pgm", 5, 11);
    let out = dir.path().join("hr");
    let o = deepcam(&["sr", "--model", s(&model), "--in", s(&inputs), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_image(out.join("a.pgm")).unwrap().pixels.shape(), (16, 16));
    assert_eq!(load_image(out.join("b.pgm")).unwrap().pixels.shape(), (10, 22));
}

#[test]
fn eval_writes_rows_for_each_image_and_averages() {
    let dir = tempfile::tempdir().unwrap();
    let model = nearest_model(dir.path());
    let hr = dir.path().join("hr");
    fs::create_dir(&hr).unwrap();
    small_image(&hr, "a.pgm", 32, 30);
    small_image(&hr, "b.pgm", 25, 40);
    let csv = dir.path().join("eval.csv");
    let o = deepcam(&["eval", "--model", s(&model), "--hr-dir", s(&hr), "--scale", "2", "--csv", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image,method,psnr_db");
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(lines[1].starts_with("a.pgm,bicubic,"));
    assert!(lines[6].starts_with("average,deepcam,"));
    for line in &lines[1..] {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
}

#[test]
fn eval_scale_must_match_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = nearest_model(dir.path());
    let csv = dir.path().join("eval.csv");
    let o = deepcam(&["eval", "--model", s(&model), "--hr-dir", s(&data("test")), "--scale", "3", "--csv", s(&csv)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_dumps_one_threshold_row_per_atom_and_feature_maps() {
    let dir = tempfile::tempdir().unwrap();
    let model = one_layer_model(dir.path());
    let input = small_image(dir.path(), "in.pgm", 12, 10);
    let dump = dir.path().join("dump");
    let o = deepcam(&["inspect", "--model", s(&model), "--dump-dir", s(&dump), "--input", s(&input)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dump.join("thresholds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "layer,atom,lambda,kind");
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",IPAD")).count(), 2);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",CAD")).count(), 2);
    for ch in 1..=4 {
        let map = load_image(dump.join(format!("layer1_ch{ch:03}.pgm"))).unwrap();
        assert_eq!(map.pixels.shape(), (10, 8));
    }
}

#[test]
fn empty_training_directory_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = deepcam(&["prepare", "--hr-dir", s(&empty), "--out", s(&dir.path().join("pairs.bin"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("0 found"));
}

#[test]
fn unknown_flag_is_rejected() {
    let o = deepcam(&["sr", "--model", "m", "--in", "a", "--out", "b", "--sharpen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--sharpen"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = nearest_model(dir.path());
    let o = deepcam(&[
        "sr",
        "--model",
        s(&model),
        "--in",
        s(&dir.path().join("nope.pgm")),
        "--out",
        s(&dir.path().join("x.pgm")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn too_few_filters_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, format!("train_dir = {}\nfilter_sides = 3, 3\nfilters = 16, 4\n", s(&data("train")))).unwrap();
    let o = deepcam(&["train", "--config", s(&cfg), "--out-model", s(&dir.path().join("m.dcam"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer 2"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    fs::create_dir(&train).unwrap();
    for name in ["brick.pgm", "camera.pgm"] {
        fs::copy(data("train").join(name), train.join(name)).unwrap();
    }
    let cfg = dir.path().join("tiny.conf");
    fs::write(
        &cfg,
        "train_dir = train\nfilter_sides = 3\nfilters = 8\nsuper_patches = 1500\nsmall_patches = 2000\n\
         search_samples = 1000\nmax_batches = 2\niters_per_batch = 5\nseed = 4\n",
    )
    .unwrap();
    let a = dir.path().join("a.dcam");
    let b = dir.path().join("b.dcam");
    for out in [&a, &b] {
        let o = deepcam(&["train", "--config", s(&cfg), "--out-model", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(dir.path().join("a.dcam.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("layer=1 stage=ipad")));
    assert!(log.lines().any(|l| l.starts_with("layer=1 stage=cad")));

    let pairs = dir.path().join("pairs.bin");
    let o = deepcam(&["prepare", "--hr-dir", s(&train), "--out", s(&pairs), "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = dir.path().join("c.dcam");
    let o = deepcam(&["train", "--config", s(&cfg), "--out-model", s(&c), "--pairs", s(&pairs)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let o = Command::new(env!("CARGO_BIN_EXE_deepcam"))
        .args(["train", "--config", s(&cfg), "--out-model", s(&dir.path().join("d.dcam"))])
        .env("DEEPCAM_SEED", "5")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(dir.path().join("d.dcam")).unwrap());
}
