//! Convolutional analysis dictionary learning and a layered analysis model
//! for single-image super-resolution.
//!
//! Layout of the crate, bottom up:
//!
//! - [`structured`]: Toeplitz and right-dual operators, valid cross-correlation,
//!   column-stacking `vec`, soft-thresholding.
//! - [`subspace`]: signal-subspace estimation and the projections that shape
//!   the atom feasible set.
//! - [`objectives`]: penalty terms and their gradients.
//! - [`convgoal`]: the conjugate-gradient learner over unit-norm atoms.
//! - [`model`]: layer sizing, training, inference and the model file.
//! - [`imaging`]: image I/O, bicubic resampling, training pairs, PSNR.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod convgoal;
pub mod error;
pub mod imaging;
pub mod linalg;
pub mod model;
pub mod objectives;
pub mod structured;
pub mod subspace;

pub use error::{Error, Result};
pub use structured::{ConvAnalysisDictionary, FeatureTensor, FilterAtom, Geometry, RightDual, ToeplitzOperator};

/// Dense real matrix used for dictionaries and data sets.
pub type Matrix = nalgebra::DMatrix<f64>;
