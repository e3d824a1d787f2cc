//! The five subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use nalgebra::DMatrix;

use deepcam::imaging::{
    bicubic_resize, build_training_pairs, degrade, load_image, modcrop, psnr, save_image, LumaImage, TrainingPairs,
};
use deepcam::model::{layer_forward, train_model, DeepCamModel, TrainReport};
use deepcam::{Error, FeatureTensor};

use crate::config::RunConfig;

const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "pnm", "png"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Image files of `dir`, sorted by name.
pub fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_images(dir: &Path) -> anyhow::Result<Vec<(String, LumaImage)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {} (0 found)", dir.display())).into());
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let img = load_image(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((name, img))
        })
        .collect()
}

pub fn prepare(cfg: &RunConfig, hr_dir: &Path, out: &Path) -> anyhow::Result<TrainingPairs> {
    let images: Vec<LumaImage> = load_images(hr_dir)?.into_iter().map(|(_, i)| i).collect();
    info!("building training pairs from {} images", images.len());
    let pairs = build_training_pairs(&images, &cfg.pair_config())?;
    pairs.save(out).with_context(|| format!("writing {}", out.display()))?;
    info!(
        "{} super-patches of side {}, {} small patches -> {}",
        pairs.super_patches.ncols(),
        pairs.super_side,
        pairs.small.patches.ncols(),
        out.display()
    );
    Ok(pairs)
}

fn log_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn write_log(path: &Path, report: &TrainReport) -> anyhow::Result<()> {
    let mut f =
        std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for w in report.plan.cad_warnings.iter().chain(&report.plan.overridden) {
        writeln!(f, "# warning: {}", w.message)?;
    }
    for l in &report.layers {
        for (stage, rep) in [("ipad", Some(&l.ipad)), ("cad", l.cad.as_ref())] {
            let Some(rep) = rep else { continue };
            for r in &rep.records {
                writeln!(f, "layer={} stage={stage} {}", l.index, r.log_line())?;
            }
        }
        writeln!(
            f,
            "layer={} rho_ipad={:e} rho_cad={}",
            l.index,
            l.ipad_rho,
            l.cad_rho.map_or("-".into(), |r| format!("{r:e}"))
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out_model: &Path, pairs_path: Option<&Path>) -> anyhow::Result<TrainReport> {
    let pairs = match pairs_path.or(cfg.pairs.as_deref()) {
        Some(p) => TrainingPairs::load(p).with_context(|| format!("loading pairs {}", p.display()))?,
        None => {
            let Some(dir) = &cfg.train_dir else {
                return Err(Error::InvalidArgument("config needs train_dir or pairs".into()).into());
            };
            let images: Vec<LumaImage> = load_images(dir)?.into_iter().map(|(_, i)| i).collect();
            build_training_pairs(&images, &cfg.pair_config())?
        }
    };
    let report = train_model(&pairs, &cfg.train)?;
    report.model.save(out_model).with_context(|| format!("writing {}", out_model.display()))?;
    write_log(&log_path(out_model), &report)?;
    info!("model written to {}", out_model.display());
    Ok(report)
}

fn to_unit(img: &LumaImage) -> DMatrix<f64> {
    &img.pixels / 255.0
}

fn from_unit(m: &DMatrix<f64>) -> anyhow::Result<LumaImage> {
    Ok(LumaImage::new(m.map(|v| (v * 255.0).round().clamp(0.0, 255.0)))?)
}

/// Super-resolves an 8-bit image to an 8-bit image.
pub fn super_resolve_image(model: &DeepCamModel, img: &LumaImage) -> anyhow::Result<LumaImage> {
    from_unit(&model.super_resolve(&to_unit(img))?)
}

pub fn sr(model_path: &Path, input: &Path, output: &Path) -> anyhow::Result<usize> {
    let model = DeepCamModel::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
        list_images(input)?
            .into_iter()
            .map(|p| {
                let out = output.join(p.file_name().expect("listed file"));
                (p, out)
            })
            .collect()
    } else {
        vec![(input.to_path_buf(), output.to_path_buf())]
    };
    for (src, dst) in &jobs {
        let img = load_image(src).with_context(|| format!("loading {}", src.display()))?;
        let hr = super_resolve_image(&model, &img)?;
        save_image(dst, &hr).with_context(|| format!("writing {}", dst.display()))?;
        info!(
            "{} ({}x{}) -> {} ({}x{})",
            src.display(),
            img.width(),
            img.height(),
            dst.display(),
            hr.width(),
            hr.height()
        );
    }
    Ok(jobs.len())
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub bicubic: f64,
    pub model: f64,
}

/// Degrades every image of `hr_dir`, super-resolves it with bicubic and the
/// model, and scores both against the cropped original.
pub fn evaluate(model: &DeepCamModel, hr_dir: &Path, scale: usize, border: usize) -> anyhow::Result<Vec<EvalRow>> {
    if scale != model.scale {
        return Err(Error::InvalidArgument(format!(
            "evaluation scale {scale} differs from the model's {}",
            model.scale
        ))
        .into());
    }
    let mut rows = Vec::new();
    for (name, img) in load_images(hr_dir)? {
        let hr = modcrop(&img.pixels, scale);
        let lr = degrade(&hr, scale, true)?;
        let bic = bicubic_resize(&lr, scale as f64)?.map(|v| v.round().clamp(0.0, 255.0));
        let ours = super_resolve_image(model, &LumaImage::new(lr)?)?;
        let row = EvalRow { bicubic: psnr(&hr, &bic, border)?, model: psnr(&hr, &ours.pixels, border)?, image: name };
        info!("{}: bicubic {:.3} dB, model {:.3} dB", row.image, row.bicubic, row.model);
        rows.push(row);
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "image,method,psnr_db";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},bicubic,{}\n{},deepcam,{}\n", r.image, r.bicubic, r.image, r.model));
    }
    let n = rows.len().max(1) as f64;
    let b = rows.iter().map(|r| r.bicubic).sum::<f64>() / n;
    let m = rows.iter().map(|r| r.model).sum::<f64>() / n;
    s.push_str(&format!("average,bicubic,{b}\naverage,deepcam,{m}\n"));
    s
}

pub fn eval(model_path: &Path, hr_dir: &Path, scale: usize, csv: &Path) -> anyhow::Result<Vec<EvalRow>> {
    let model = DeepCamModel::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let rows = evaluate(&model, hr_dir, scale, scale)?;
    fs::write(csv, eval_csv(&rows)).with_context(|| format!("writing {}", csv.display()))?;
    Ok(rows)
}

/// `layer,atom,lambda,kind` rows, atoms 1-based.
pub fn threshold_csv(model: &DeepCamModel) -> String {
    let mut s = String::from("layer,atom,lambda,kind\n");
    for l in &model.layers {
        for (j, lam) in l.lambdas.iter().enumerate() {
            let kind = if j < l.spec.ipad_atoms { "IPAD" } else { "CAD" };
            s.push_str(&format!("{},{},{},{kind}\n", l.spec.index, j + 1, lam));
        }
    }
    s
}

fn stretch(channel: &DMatrix<f64>) -> anyhow::Result<LumaImage> {
    let (lo, hi) = (channel.min(), channel.max());
    let span = hi - lo;
    let px = if span > 0.0 { channel.map(|v| ((v - lo) / span * 255.0).round()) } else { channel.map(|_| 0.0) };
    Ok(LumaImage::new(px)?)
}

pub fn inspect(model_path: &Path, dump_dir: &Path, input: Option<&Path>) -> anyhow::Result<usize> {
    let model = DeepCamModel::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    fs::create_dir_all(dump_dir).with_context(|| format!("creating {}", dump_dir.display()))?;
    fs::write(dump_dir.join("thresholds.csv"), threshold_csv(&model))?;
    let Some(input) = input else { return Ok(0) };
    let img = load_image(input).with_context(|| format!("loading {}", input.display()))?;
    let mut x = FeatureTensor::from_matrix(&to_unit(&img))?;
    let mut written = 0;
    for layer in &model.layers {
        if x.rows() < layer.spec.side || x.cols() < layer.spec.side {
            warn!("input too small for layer {}; stopping", layer.spec.index);
            break;
        }
        x = layer_forward(&x, layer)?;
        for ch in 0..x.channels() {
            let path = dump_dir.join(format!("layer{}_ch{:03}.pgm", layer.spec.index, ch + 1));
            save_image(&path, &stretch(&x.channel_matrix(ch))?)?;
            written += 1;
        }
    }
    if written == 0 && !model.layers.is_empty() {
        bail!(Error::InvalidArgument("input is smaller than the first layer's filters".into()));
    }
    Ok(written)
}
