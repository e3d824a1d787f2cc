//! The layered analysis model: sizing, layers, inference, thresholds,
//! serialization and training.

pub mod format;
pub mod layer;
pub mod network;
pub mod sizing;
pub mod thresholds;
pub mod train;

pub use layer::{compose_filters, layer_forward, layer_responses, threshold_rows, TrainedLayer};
pub use network::{pixel_shuffle, pixel_unshuffle, replicate_pad, DeepCamModel};
pub use sizing::{plan_layers, LayerPlan, LayerSpec, ModelSpec};
pub use thresholds::{default_grid, threshold_scale_search, ThresholdRule, ThresholdSearch};
pub use train::{learn_cad, learn_ipad, train_model, TrainConfig, TrainReport, WeightRule};
