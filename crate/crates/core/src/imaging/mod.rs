//! Images, resampling, training data and quality metrics.

pub mod dataset;
pub mod io;
pub mod metrics;
pub mod resize;

pub use dataset::{build_training_pairs, degrade, modcrop, quantize, PairConfig, TrainingPairs};
pub use io::{load_image, save_image, LumaImage};
pub use metrics::psnr;
pub use resize::bicubic_resize;
