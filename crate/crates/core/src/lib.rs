//! camforge-core: weakly-supervised lesion segmentation from image-level
//! labels.
//!
//! The pipeline: train a GAP-head classifier, extract class activation
//! maps at multiple input scales, fuse and threshold them into seed
//! pseudo-masks, sharpen the seeds with fully connected CRF mean-field
//! inference, then train the two-branch Mixed-UNet on the pseudo-masks.
//! Everything runs on a small CPU tensor engine with reverse-mode
//! differentiation; all randomness is seed-derived and every run is
//! reproducible bit-for-bit.

pub mod cam;
pub mod classifier;
pub mod crf;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod unet;

pub use cam::{Cam, ScaleSet, ThresholdConfig};
pub use crf::{ClassDistribution, CrfParams, UnaryField};
pub use error::{Error, Result};
pub use losses::SeedRegions;
pub use metrics::MetricsReport;
pub use tensor::{LabelMask, Shape, Tensor};
