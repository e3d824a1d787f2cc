//! Training data: LR super-patches paired with the HR pixels they should predict.
//!
//! An HR image of size `sH × sW` is bicubically shrunk by `1/s` to the LR image.
//! LR pixel `(r, c)` owns the HR block with top-left corner `(s r, s c)`; within
//! an output group of `s²` values, channel `k` is HR offset `(k / s, k % s)`.
//!
//! Pair values are on the unit scale (8-bit values divided by 255).

use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::imaging::io::LumaImage;
use crate::imaging::resize::bicubic_resize;
use crate::model::sizing::{anchor_offsets, super_patch_sizes};

/// Crops an image so both sides are multiples of `scale`.
pub fn modcrop(img: &DMatrix<f64>, scale: usize) -> DMatrix<f64> {
    let rows = img.nrows() - img.nrows() % scale;
    let cols = img.ncols() - img.ncols() % scale;
    img.view((0, 0), (rows, cols)).into_owned()
}

/// Bicubic shrink by `1/scale`, optionally rounded and clamped to 8 bits.
/// `hr` must already be cropped to multiples of `scale`.
pub fn degrade(hr: &DMatrix<f64>, scale: usize, quantize: bool) -> Result<DMatrix<f64>> {
    if scale == 0 {
        return Err(Error::arg("scale must be positive"));
    }
    if !hr.nrows().is_multiple_of(scale) || !hr.ncols().is_multiple_of(scale) {
        return Err(Error::dim(format!("{}x{} is not a multiple of scale {scale}", hr.nrows(), hr.ncols())));
    }
    let mut lr = bicubic_resize(hr, 1.0 / scale as f64)?;
    if quantize {
        lr.apply(|v| *v = v.round().clamp(0.0, 255.0));
    }
    Ok(lr)
}

/// Rounds and clamps to the 8-bit grid.
pub fn quantize(img: &DMatrix<f64>) -> DMatrix<f64> {
    img.map(|v| v.round().clamp(0.0, 255.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub scale: usize,
    /// Filter sides `p_1..p_{L+1}` including the synthesis layer.
    pub sides: Vec<usize>,
    pub super_patches: usize,
    pub small_patches: usize,
    pub seed: u64,
    /// Round the LR images to 8 bits, as a stored LR image would be.
    pub quantize: bool,
}

/// Top-left LR corner of a super-patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// A window inside super-patch `patch` with top-left `(row, col)` on that layer's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSample {
    pub patch: usize,
    pub row: usize,
    pub col: usize,
}

/// Small patches of one layer's input with their HR targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallPatches {
    pub samples: Vec<WindowSample>,
    /// `n × N₂` windows.
    pub patches: DMatrix<f64>,
    /// `s² × N₂` HR groups under each window's anchor pixel.
    pub targets: DMatrix<f64>,
    /// `s²p² × N₂` HR blocks under each whole window, column-major.
    pub block_targets: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    pub config: PairConfig,
    /// `p_{S,1}`.
    pub super_side: usize,
    /// `p_{S,1}² × N₁` LR super-patches, column-major.
    pub super_patches: DMatrix<f64>,
    /// `(s p_{S,1})² × N₁` HR blocks under each super-patch, column-major.
    pub hr_blocks: DMatrix<f64>,
    /// `s² × N₁` HR groups each super-patch predicts.
    pub targets: DMatrix<f64>,
    pub origins: Vec<PatchOrigin>,
    /// First-layer small patches.
    pub small: SmallPatches,
}

/// Deterministic generator for the window samples of layer `layer` (1-based).
pub fn layer_rng(seed: u64, layer: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(layer as u64 + 1))
}

/// Samples up to `requested` distinct windows, `per_axis²` per super-patch.
pub fn sample_windows(patches: usize, per_axis: usize, requested: usize, rng: &mut ChaCha8Rng) -> Vec<WindowSample> {
    let per_patch = per_axis * per_axis;
    let total = patches * per_patch;
    let count = requested.min(total);
    if count < requested {
        warn!("requested {requested} small patches, only {total} positions exist; using {count}");
    }
    index::sample(rng, total, count)
        .into_iter()
        .map(|i| {
            let rem = i % per_patch;
            WindowSample { patch: i / per_patch, row: rem % per_axis, col: rem / per_axis }
        })
        .collect()
}

/// Cuts `window × window × channels` windows out of column-stored feature tensors
/// of side `side`. The output layout matches atom taps: `i + w (j + w ch)`.
pub fn extract_windows(
    data: &DMatrix<f64>,
    side: usize,
    channels: usize,
    window: usize,
    samples: &[WindowSample],
) -> Result<DMatrix<f64>> {
    if data.nrows() != side * side * channels {
        return Err(Error::dim(format!("columns have length {}, expected {side}x{side}x{channels}", data.nrows())));
    }
    let mut out = DMatrix::zeros(window * window * channels, samples.len());
    for (k, s) in samples.iter().enumerate() {
        if s.row + window > side || s.col + window > side || s.patch >= data.ncols() {
            return Err(Error::dim("window sample outside its super-patch"));
        }
        let src = data.column(s.patch);
        let mut dst = out.column_mut(k);
        let mut t = 0;
        for ch in 0..channels {
            for j in 0..window {
                let base = s.row + side * (s.col + j + side * ch);
                for i in 0..window {
                    dst[t] = src[base + i];
                    t += 1;
                }
            }
        }
    }
    Ok(out)
}

/// HR layout helper for blocks stored per super-patch.
#[derive(Debug, Clone, Copy)]
pub struct HrLayout {
    pub scale: usize,
    /// LR side of the stored super-patch region.
    pub super_side: usize,
}

impl HrLayout {
    fn block_side(&self) -> usize {
        self.scale * self.super_side
    }

    /// HR block (column-major, side `s·window`) under the LR window at
    /// `(row + offset, col + offset)` of each sample.
    pub fn blocks(
        &self,
        hr: &DMatrix<f64>,
        offset: usize,
        window: usize,
        samples: &[WindowSample],
    ) -> Result<DMatrix<f64>> {
        let b = self.block_side();
        let s = self.scale;
        if hr.nrows() != b * b {
            return Err(Error::dim("HR block column length does not match layout"));
        }
        let w = s * window;
        let mut out = DMatrix::zeros(w * w, samples.len());
        for (k, smp) in samples.iter().enumerate() {
            let (r0, c0) = (s * (smp.row + offset), s * (smp.col + offset));
            if r0 + w > b || c0 + w > b {
                return Err(Error::dim("HR window outside its block"));
            }
            let src = hr.column(smp.patch);
            let mut dst = out.column_mut(k);
            for j in 0..w {
                for i in 0..w {
                    dst[i + w * j] = src[(r0 + i) + b * (c0 + j)];
                }
            }
        }
        Ok(out)
    }

    /// `s²` HR group under LR pixel `(row + offset, col + offset)`; channel `k` is
    /// HR offset `(k / s, k % s)`.
    pub fn groups(&self, hr: &DMatrix<f64>, offset: usize, samples: &[WindowSample]) -> Result<DMatrix<f64>> {
        let b = self.block_side();
        let s = self.scale;
        if hr.nrows() != b * b {
            return Err(Error::dim("HR block column length does not match layout"));
        }
        let mut out = DMatrix::zeros(s * s, samples.len());
        for (k, smp) in samples.iter().enumerate() {
            let (r0, c0) = (s * (smp.row + offset), s * (smp.col + offset));
            if r0 + s > b || c0 + s > b {
                return Err(Error::dim("HR group outside its block"));
            }
            let src = hr.column(smp.patch);
            for ch in 0..s * s {
                out[(ch, k)] = src[(r0 + ch / s) + b * (c0 + ch % s)];
            }
        }
        Ok(out)
    }
}

/// Samples super-patches from the LR versions of `images` and pairs them with HR data.
pub fn build_training_pairs(images: &[LumaImage], cfg: &PairConfig) -> Result<TrainingPairs> {
    let s = cfg.scale;
    if s == 0 {
        return Err(Error::arg("scale must be positive"));
    }
    if cfg.sides.is_empty() {
        return Err(Error::arg("layer chain is empty"));
    }
    if images.is_empty() {
        return Err(Error::arg("no training images (0 found)"));
    }
    if cfg.super_patches == 0 || cfg.small_patches == 0 {
        return Err(Error::arg("patch counts must be positive"));
    }
    let (layers, synth) = cfg.sides.split_at(cfg.sides.len() - 1);
    let ps = super_patch_sizes(layers, synth[0])?[0];

    let mut hrs = Vec::with_capacity(images.len());
    let mut lrs = Vec::with_capacity(images.len());
    let mut counts = Vec::with_capacity(images.len());
    for img in images {
        let hr = modcrop(&img.pixels, s);
        if hr.nrows() < s * ps || hr.ncols() < s * ps {
            counts.push(0);
            hrs.push(hr);
            lrs.push(DMatrix::zeros(0, 0));
            continue;
        }
        let lr = degrade(&hr, s, cfg.quantize)?;
        counts.push((lr.nrows() - ps + 1) * (lr.ncols() - ps + 1));
        hrs.push(hr);
        lrs.push(lr);
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::arg(format!("no image is large enough for {ps}x{ps} LR super-patches")));
    }
    let n1 = cfg.super_patches.min(total);
    if n1 < cfg.super_patches {
        warn!("requested {} super-patches, only {total} positions exist; using {n1}", cfg.super_patches);
    }

    let mut rng = layer_rng(cfg.seed, 0);
    let picks = index::sample(&mut rng, total, n1).into_vec();
    let b = s * ps;
    let mut super_patches = DMatrix::zeros(ps * ps, n1);
    let mut hr_blocks = DMatrix::zeros(b * b, n1);
    let mut origins = Vec::with_capacity(n1);
    for (k, mut idx) in picks.into_iter().enumerate() {
        let mut image = 0;
        while idx >= counts[image] {
            idx -= counts[image];
            image += 1;
        }
        let lr = &lrs[image];
        let per_col = lr.nrows() - ps + 1;
        let (row, col) = (idx % per_col, idx / per_col);
        origins.push(PatchOrigin { image, row, col });
        let mut dst = super_patches.column_mut(k);
        for j in 0..ps {
            for i in 0..ps {
                dst[i + ps * j] = lr[(row + i, col + j)] / 255.0;
            }
        }
        let hr = &hrs[image];
        let mut dst = hr_blocks.column_mut(k);
        for j in 0..b {
            for i in 0..b {
                dst[i + b * j] = hr[(s * row + i, s * col + j)] / 255.0;
            }
        }
    }

    let layout = HrLayout { scale: s, super_side: ps };
    let offsets = anchor_offsets(&cfg.sides);
    let whole: Vec<WindowSample> = (0..n1).map(|k| WindowSample { patch: k, row: 0, col: 0 }).collect();
    let targets = layout.groups(&hr_blocks, *offsets.last().expect("nonempty"), &whole)?;

    let p1 = cfg.sides[0];
    let per_axis = ps - p1 + 1;
    let samples = sample_windows(n1, per_axis, cfg.small_patches, &mut layer_rng(cfg.seed, 1));
    let small = SmallPatches {
        patches: extract_windows(&super_patches, ps, 1, p1, &samples)?,
        targets: layout.groups(&hr_blocks, offsets[1], &samples)?,
        block_targets: layout.blocks(&hr_blocks, 0, p1, &samples)?,
        samples,
    };
    Ok(TrainingPairs { config: cfg.clone(), super_side: ps, super_patches, hr_blocks, targets, origins, small })
}

const CACHE_MAGIC: &[u8; 4] = b"DCTP";
const CACHE_VERSION: u32 = 1;

impl TrainingPairs {
    pub fn layout(&self) -> HrLayout {
        HrLayout { scale: self.config.scale, super_side: self.super_side }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new(CACHE_MAGIC, CACHE_VERSION);
        w.u32(c.scale);
        w.u32(c.sides.len());
        for &p in &c.sides {
            w.u32(p);
        }
        w.u32(c.super_patches);
        w.u32(c.small_patches);
        w.u64(c.seed);
        w.u32(c.quantize as usize);
        w.u32(self.super_side);
        w.matrix(&self.super_patches);
        w.matrix(&self.hr_blocks);
        w.matrix(&self.targets);
        w.u32(self.origins.len());
        for o in &self.origins {
            w.u32(o.image);
            w.u32(o.row);
            w.u32(o.col);
        }
        w.u32(self.small.samples.len());
        for s in &self.small.samples {
            w.u32(s.patch);
            w.u32(s.row);
            w.u32(s.col);
        }
        w.matrix(&self.small.patches);
        w.matrix(&self.small.targets);
        w.matrix(&self.small.block_targets);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, CACHE_MAGIC, CACHE_VERSION)?;
        let scale = r.u32()?;
        let n_sides = r.u32()?;
        if n_sides == 0 || n_sides > 64 {
            return Err(Error::format(format!("implausible chain length {n_sides}")));
        }
        let sides = (0..n_sides).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let super_patches_req = r.u32()?;
        let small_req = r.u32()?;
        let seed = r.u64()?;
        let quantize = r.u32()? != 0;
        let super_side = r.u32()?;
        let super_patches = r.matrix()?;
        let hr_blocks = r.matrix()?;
        let targets = r.matrix()?;
        let triples = |r: &mut Reader| -> Result<Vec<[usize; 3]>> {
            let n = r.u32()?;
            if n.saturating_mul(12) > r.remaining() {
                return Err(Error::format("unexpected end of data"));
            }
            (0..n).map(|_| Ok([r.u32()?, r.u32()?, r.u32()?])).collect()
        };
        let origins = triples(&mut r)?.into_iter().map(|[image, row, col]| PatchOrigin { image, row, col }).collect();
        let samples = triples(&mut r)?.into_iter().map(|[patch, row, col]| WindowSample { patch, row, col }).collect();
        let small = SmallPatches { samples, patches: r.matrix()?, targets: r.matrix()?, block_targets: r.matrix()? };
        r.finish()?;
        let config =
            PairConfig { scale, sides, super_patches: super_patches_req, small_patches: small_req, seed, quantize };
        let pairs = Self { config, super_side, super_patches, hr_blocks, targets, origins, small };
        pairs.check()?;
        Ok(pairs)
    }

    fn check(&self) -> Result<()> {
        let s = self.config.scale;
        let n1 = self.super_patches.ncols();
        let ps = self.super_side;
        let ok = self.super_patches.nrows() == ps * ps
            && self.hr_blocks.shape() == ((s * ps) * (s * ps), n1)
            && self.targets.shape() == (s * s, n1)
            && self.origins.len() == n1
            && self.small.patches.ncols() == self.small.samples.len()
            && self.small.targets.ncols() == self.small.samples.len();
        if !ok {
            return Err(Error::format("inconsistent training-pair shapes"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
