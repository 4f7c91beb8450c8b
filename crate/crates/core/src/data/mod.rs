//! Dataset handling: synthetic corpus generation, manifests,
//! augmentation, and loading.

pub mod augment;
pub mod loader;
pub mod manifest;
pub mod synth;
