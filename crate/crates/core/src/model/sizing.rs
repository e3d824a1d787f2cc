//! Receptive-field bookkeeping and atom-count bounds for a layer chain.
//!
//! A chain is the list of spatial filter sides `p_1..p_L` of the analysis
//! layers followed by the side `p_{L+1}` of the synthesis layer.

use log::warn;

use crate::error::{Error, Result};

/// Side of the single convolution equivalent to the whole stack: `Σp − (count − 1)`.
pub fn effective_filter_size(sides: &[usize]) -> Result<usize> {
    if sides.is_empty() {
        return Err(Error::arg("effective filter size of an empty chain"));
    }
    if sides.contains(&0) {
        return Err(Error::arg("filter sides must be positive"));
    }
    Ok(sides.iter().sum::<usize>() - (sides.len() - 1))
}

/// Super-patch side at each layer, `p_{S,i} = p_{L+1} + Σ_{j=i}^{L} (p_j − 1)`,
/// for `i = 1..=L+1`. The last entry equals the synthesis side.
pub fn super_patch_sizes(layer_sides: &[usize], synthesis_side: usize) -> Result<Vec<usize>> {
    if synthesis_side == 0 || layer_sides.contains(&0) {
        return Err(Error::arg("filter sides must be positive"));
    }
    let mut out = vec![synthesis_side; layer_sides.len() + 1];
    for i in (0..layer_sides.len()).rev() {
        out[i] = out[i + 1] + layer_sides[i] - 1;
    }
    Ok(out)
}

fn window_area(super_side: usize, side: usize) -> Result<usize> {
    if super_side < side {
        return Err(Error::arg(format!("super-patch side {super_side} is smaller than filter side {side}")));
    }
    let w = super_side - side + 1;
    Ok(w * w)
}

/// Minimum information-preserving atoms per layer,
/// `ceil(p_{S,1}² d₀ / (p_{S,i} − p_i + 1)²)`.
pub fn min_ipad_atoms(layer_sides: &[usize], synthesis_side: usize, input_channels: usize) -> Result<Vec<usize>> {
    let supers = super_patch_sizes(layer_sides, synthesis_side)?;
    let first = supers[0] * supers[0] * input_channels;
    layer_sides.iter().zip(&supers).map(|(&p, &ps)| Ok(first.div_ceil(window_area(ps, p)?))).collect()
}

/// Minimum clustering atoms at a layer given the previous layer's count,
/// `ceil(d_{C,i−1} (p_{S,i−1} − p_{i−1} + 1)² / (p_{S,i} − p_i + 1)²)`.
pub fn min_cad_atoms(
    prev_cad: usize,
    prev_super: usize,
    prev_side: usize,
    super_side: usize,
    side: usize,
) -> Result<usize> {
    let prev = window_area(prev_super, prev_side)?;
    let cur = window_area(super_side, side)?;
    Ok((prev_cad * prev).div_ceil(cur))
}

/// Offset of each layer's output grid inside the super-patch, in LR pixels:
/// entry `i` is `Σ_{j≤i} floor((p_j − 1)/2)` with entry 0 equal to 0.
pub fn anchor_offsets(sides: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sides.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &p in sides {
        acc += (p.max(1) - 1) / 2;
        out.push(acc);
    }
    out
}

/// Geometry of one analysis layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    /// 1-based layer index.
    pub index: usize,
    pub side: usize,
    pub in_channels: usize,
    pub atoms: usize,
    pub ipad_atoms: usize,
    pub super_side: usize,
}

impl LayerSpec {
    pub fn cad_atoms(&self) -> usize {
        self.atoms - self.ipad_atoms
    }

    /// `n_i = p_i² d_{i−1}`.
    pub fn atom_len(&self) -> usize {
        self.side * self.side * self.in_channels
    }

    /// `S_i = p_{S,i}² d_{i−1}`.
    pub fn super_len(&self) -> usize {
        self.super_side * self.super_side * self.in_channels
    }

    /// Side of this layer's output on a super-patch, `p_{S,i} − p_i + 1`.
    pub fn window_side(&self) -> usize {
        self.super_side - self.side + 1
    }
}

/// Validated layer chain of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub scale: usize,
    pub layers: Vec<LayerSpec>,
    pub synthesis_side: usize,
}

impl ModelSpec {
    /// Filter sides `p_1..p_{L+1}` including the synthesis layer.
    pub fn sides(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.side).collect();
        s.push(self.synthesis_side);
        s
    }

    pub fn super_side(&self) -> usize {
        self.layers.first().map_or(self.synthesis_side, |l| l.super_side)
    }

    /// Channels entering the synthesis layer.
    pub fn synthesis_channels(&self) -> usize {
        self.layers.last().map_or(1, |l| l.atoms)
    }

    pub fn effective_filter_size(&self) -> usize {
        effective_filter_size(&self.sides()).expect("validated chain")
    }
}

/// A violated atom-count bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundViolation {
    pub layer: usize,
    pub message: String,
}

/// Outcome of [`plan_layers`]: the chain plus any violated bounds that were tolerated.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub spec: ModelSpec,
    /// Clustering-count bounds that failed; these never block training.
    pub cad_warnings: Vec<BoundViolation>,
    /// Information-preserving bounds that failed and were overridden.
    pub overridden: Vec<BoundViolation>,
}

/// Sizes each layer: `d_Ii` is the minimum information-preserving count and the
/// remaining `d_i − d_Ii` atoms are clustering atoms.
///
/// A layer with fewer filters than its information-preserving minimum is an
/// error unless `allow_violation` is set, in which case all its atoms are
/// information preserving.
pub fn plan_layers(
    scale: usize,
    sides: &[usize],
    filters: &[usize],
    synthesis_side: usize,
    allow_violation: bool,
) -> Result<LayerPlan> {
    if scale == 0 {
        return Err(Error::arg("scale must be positive"));
    }
    if sides.len() != filters.len() {
        return Err(Error::arg(format!("{} filter sides given for {} layers", sides.len(), filters.len())));
    }
    if filters.contains(&0) {
        return Err(Error::arg("every layer needs at least one filter"));
    }
    let supers = super_patch_sizes(sides, synthesis_side)?;
    let mins = min_ipad_atoms(sides, synthesis_side, 1)?;
    let mut layers = Vec::with_capacity(sides.len());
    let mut cad_warnings = Vec::new();
    let mut overridden = Vec::new();
    let mut in_channels = 1;
    for i in 0..sides.len() {
        let (p, d, ps) = (sides[i], filters[i], supers[i]);
        let ipad = if d < mins[i] {
            let v = BoundViolation {
                layer: i + 1,
                message: format!(
                    "layer {}: {d} filters but at least {} information-preserving atoms are needed \
                     (ceil({}^2 * 1 / ({ps} - {p} + 1)^2))",
                    i + 1,
                    mins[i],
                    supers[0]
                ),
            };
            if !allow_violation {
                return Err(Error::arg(v.message));
            }
            warn!("{} (overridden)", v.message);
            overridden.push(v);
            d
        } else {
            mins[i]
        };
        let layer = LayerSpec { index: i + 1, side: p, in_channels, atoms: d, ipad_atoms: ipad, super_side: ps };
        if let Some(prev) = layers.last() {
            let prev: &LayerSpec = prev;
            let need = min_cad_atoms(prev.cad_atoms(), prev.super_side, prev.side, ps, p)?;
            if layer.cad_atoms() < need {
                let v = BoundViolation {
                    layer: i + 1,
                    message: format!(
                        "layer {}: {} clustering atoms, fewer than the {need} that keep the count per \
                         super-patch from decreasing",
                        i + 1,
                        layer.cad_atoms()
                    ),
                };
                warn!("{}", v.message);
                cad_warnings.push(v);
            }
        }
        layers.push(layer);
        in_channels = d;
    }
    Ok(LayerPlan { spec: ModelSpec { scale, layers, synthesis_side }, cad_warnings, overridden })
}
