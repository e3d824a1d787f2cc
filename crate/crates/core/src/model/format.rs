//! Binary model file.
//!
//! Layout (little-endian): magic `DCAM`, version `u32`, scale `u32`, layer count
//! `u32`; per layer `p_i, d_{i−1}, d_i, d_Ii` as `u32`, the dictionary row-major
//! as `f64`, the thresholds as `f64`; then the synthesis header
//! `p_{L+1}, n_{L+1}, s²` as `u32` and its dictionary row-major; finally the
//! CRC-32 of everything before it.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::layer::TrainedLayer;
use crate::model::network::DeepCamModel;
use crate::model::sizing::{super_patch_sizes, LayerSpec};

const MAGIC: &[u8; 4] = b"DCAM";
const VERSION: u32 = 1;

/// Sanity limit on any stored dimension.
const MAX_DIM: usize = 1 << 20;

impl DeepCamModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.scale);
        w.u32(self.layers.len());
        for layer in &self.layers {
            let s = &layer.spec;
            w.u32(s.side);
            w.u32(s.in_channels);
            w.u32(s.atoms);
            w.u32(s.ipad_atoms);
            w.row_major(&layer.omega);
            w.f64s(layer.lambdas.iter().copied());
        }
        w.u32(self.synthesis_side);
        w.u32(self.synthesis.ncols());
        w.u32(self.synthesis.nrows());
        w.row_major(&self.synthesis);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, VERSION)?;
        let dim = |r: &mut Reader, what: &str| -> Result<usize> {
            let v = r.u32()?;
            if v > MAX_DIM {
                return Err(Error::format(format!("implausible {what} {v}")));
            }
            Ok(v)
        };
        let scale = dim(&mut r, "scale")?;
        let count = dim(&mut r, "layer count")?;
        if count > 1024 {
            return Err(Error::format(format!("implausible layer count {count}")));
        }
        let mut raw = Vec::with_capacity(count);
        for _ in 0..count {
            let side = dim(&mut r, "filter side")?;
            let in_channels = dim(&mut r, "channel count")?;
            let atoms = dim(&mut r, "atom count")?;
            let ipad = dim(&mut r, "atom count")?;
            let n = side
                .checked_mul(side)
                .and_then(|v| v.checked_mul(in_channels))
                .ok_or_else(|| Error::format("layer too large"))?;
            let omega = r.row_major(atoms, n)?;
            let lambdas = r.f64s(atoms)?;
            raw.push((side, in_channels, atoms, ipad, omega, lambdas));
        }
        let synthesis_side = dim(&mut r, "synthesis side")?;
        let n = dim(&mut r, "synthesis length")?;
        let outputs = dim(&mut r, "synthesis outputs")?;
        let synthesis = r.row_major(outputs, n)?;
        r.finish()?;
        if outputs != scale * scale {
            return Err(Error::format(format!(
                "synthesis has {outputs} outputs, scale {scale} needs {}",
                scale * scale
            )));
        }

        let sides: Vec<usize> = raw.iter().map(|l| l.0).collect();
        if sides.contains(&0) || synthesis_side == 0 {
            return Err(Error::format("zero filter side"));
        }
        let supers = super_patch_sizes(&sides, synthesis_side).map_err(|e| Error::format(e.to_string()))?;
        let mut layers = Vec::with_capacity(count);
        for (i, (side, in_channels, atoms, ipad, omega, lambdas)) in raw.into_iter().enumerate() {
            let spec = LayerSpec { index: i + 1, side, in_channels, atoms, ipad_atoms: ipad, super_side: supers[i] };
            layers.push(TrainedLayer { spec, omega, lambdas });
        }
        let model = Self { scale, layers, synthesis_side, synthesis };
        model.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
