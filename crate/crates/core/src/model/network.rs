//! The assembled model and image-level inference.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::layer::{layer_forward, TrainedLayer};
use crate::model::sizing::{effective_filter_size, LayerSpec};
use crate::structured::{conv_bank_valid, FeatureTensor};

/// Analysis layers followed by a synthesis filter bank with `s²` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepCamModel {
    pub scale: usize,
    pub layers: Vec<TrainedLayer>,
    pub synthesis_side: usize,
    /// `s² × p_{L+1}² d_L`; row `k` predicts HR offset `(k / s, k % s)`.
    pub synthesis: DMatrix<f64>,
}

impl DeepCamModel {
    pub fn new(
        scale: usize,
        layers: Vec<TrainedLayer>,
        synthesis_side: usize,
        synthesis: DMatrix<f64>,
    ) -> Result<Self> {
        let model = Self { scale, layers, synthesis_side, synthesis };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || self.synthesis_side == 0 {
            return Err(Error::arg("scale and synthesis side must be positive"));
        }
        let mut channels = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.spec.in_channels != channels {
                return Err(Error::dim(format!(
                    "layer {} takes {} channels but receives {channels}",
                    i + 1,
                    layer.spec.in_channels
                )));
            }
            channels = layer.spec.atoms;
        }
        let s2 = self.scale * self.scale;
        let n = self.synthesis_side * self.synthesis_side * channels;
        if self.synthesis.shape() != (s2, n) {
            return Err(Error::dim(format!(
                "synthesis dictionary is {}x{}, expected {s2}x{n}",
                self.synthesis.nrows(),
                self.synthesis.ncols()
            )));
        }
        if self.synthesis.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite synthesis entries"));
        }
        Ok(())
    }

    /// Filter sides `p_1..p_{L+1}`.
    pub fn sides(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.spec.side).collect();
        s.push(self.synthesis_side);
        s
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn effective_filter_size(&self) -> usize {
        effective_filter_size(&self.sides()).expect("sides are positive")
    }

    /// Replicate padding (before, after) that keeps the output the size of the input.
    pub fn padding(&self) -> (usize, usize) {
        self.sides().iter().fold((0, 0), |(b, a), &p| (b + (p - 1) / 2, a + p / 2))
    }

    /// Outputs of every analysis layer on an unpadded input.
    pub fn features(&self, input: &FeatureTensor) -> Result<Vec<FeatureTensor>> {
        let mut out: Vec<FeatureTensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer_forward(out.last().unwrap_or(input), layer)?;
            out.push(next);
        }
        Ok(out)
    }

    /// The `s²` predicted HR sub-images of an unpadded input.
    pub fn predict(&self, input: &FeatureTensor) -> Result<FeatureTensor> {
        let feats = self.features(input)?;
        let last = feats.last().unwrap_or(input);
        conv_bank_valid(&self.synthesis, self.synthesis_side, last)
    }

    /// Super-resolves a unit-scale LR image to exactly `s` times its size.
    pub fn super_resolve(&self, lr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if lr.is_empty() {
            return Err(Error::dim("empty input image"));
        }
        let (before, after) = self.padding();
        let padded = replicate_pad(lr, before, after);
        let y = self.predict(&FeatureTensor::from_matrix(&padded)?)?;
        pixel_shuffle(&y, self.scale)
    }
}

/// Pads by repeating edge pixels: `before` rows/columns in front, `after` behind.
pub fn replicate_pad(img: &DMatrix<f64>, before: usize, after: usize) -> DMatrix<f64> {
    let (rows, cols) = img.shape();
    let clamp = |i: usize, n: usize| i.saturating_sub(before).min(n - 1);
    DMatrix::from_fn(rows + before + after, cols + before + after, |r, c| img[(clamp(r, rows), clamp(c, cols))])
}

/// Interleaves `s²` channels into one image: `HR[s r + k / s][s c + k % s] = Y_k[r][c]`.
pub fn pixel_shuffle(y: &FeatureTensor, scale: usize) -> Result<DMatrix<f64>> {
    if y.channels() != scale * scale {
        return Err(Error::dim(format!("{} channels cannot be shuffled at scale {scale}", y.channels())));
    }
    Ok(DMatrix::from_fn(y.rows() * scale, y.cols() * scale, |r, c| {
        y.get(r / scale, c / scale, (r % scale) * scale + c % scale)
    }))
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(img: &DMatrix<f64>, scale: usize) -> Result<FeatureTensor> {
    if scale == 0 || !img.nrows().is_multiple_of(scale) || !img.ncols().is_multiple_of(scale) {
        return Err(Error::dim("image sides must be multiples of the scale"));
    }
    let (rows, cols) = (img.nrows() / scale, img.ncols() / scale);
    let mut data = Vec::with_capacity(img.len());
    for k in 0..scale * scale {
        for c in 0..cols {
            for r in 0..rows {
                data.push(img[(scale * r + k / scale, scale * c + k % scale)]);
            }
        }
    }
    FeatureTensor::new(rows, cols, scale * scale, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sizing::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shuffle_pattern() {
        let y = FeatureTensor::new(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let hr = pixel_shuffle(&y, 2).unwrap();
        assert_eq!(hr, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn unshuffle_inverts_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = FeatureTensor::new(4, 5, 9, (0..180).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&y, 3).unwrap(), 3).unwrap(), y);
    }

    #[test]
    fn identity_model_reproduces_input() {
        let spec = LayerSpec { index: 1, side: 1, in_channels: 1, atoms: 1, ipad_atoms: 1, super_side: 1 };
        let layer = TrainedLayer::new(spec, DMatrix::from_element(1, 1, 1.0), vec![0.0]).unwrap();
        let model = DeepCamModel::new(1, vec![layer], 1, DMatrix::from_element(1, 1, 1.0)).unwrap();
        let img = DMatrix::from_fn(5, 7, |r, c| (r * 7 + c) as f64 / 40.0);
        assert_eq!(model.super_resolve(&img).unwrap(), img);
    }

    #[test]
    fn output_is_scale_times_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = LayerSpec { index: 1, side: 3, in_channels: 1, atoms: 4, ipad_atoms: 2, super_side: 5 };
        let omega = DMatrix::from_fn(4, 9, |_, _| rng.random_range(-1.0..1.0));
        let layer = TrainedLayer::new(spec, omega, vec![0.1; 4]).unwrap();
        let d = DMatrix::from_fn(4, 36, |_, _| rng.random_range(-1.0..1.0));
        let model = DeepCamModel::new(2, vec![layer], 3, d).unwrap();
        assert_eq!(model.padding(), (2, 2));
        let out = model.super_resolve(&DMatrix::from_element(16, 11, 0.5)).unwrap();
        assert_eq!(out.shape(), (32, 22));
    }

    #[test]
    fn padding_splits_even_filters() {
        let pad = |sides: &[usize]| sides.iter().fold((0, 0), |(b, a), &p| (b + (p - 1) / 2, a + p / 2));
        assert_eq!(pad(&[2, 3, 4]), (2, 4));
        let pad = replicate_pad(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), 1, 2);
        assert_eq!(pad.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 2.0, 2.0, 2.0]);
    }
}
