//! Dense-tensor numerics: kernels, reverse-mode tape, layers, optimizer,
//! and checkpoint serialization.

pub mod checkpoint;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
