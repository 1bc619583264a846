//! Axial fusion transformer U-Net: the numeric core.
//!
//! A 2D CNN encoder/decoder joined by a transformer that factorizes 3D
//! self-attention into an inter-slice pass (along the axial axis) and an
//! intra-slice pass (within each feature map), cutting per-query key
//! comparisons from `(H*W)*N` to `(H*W)+N`. Everything runs on a small
//! tape-based reverse-mode autodiff engine in f64.
//!
//! The crate is `no_std` + `alloc`; file and process concerns live in the
//! companion CLI crate. Byte-level codecs for the volume and checkpoint
//! formats are provided here so they stay testable without an OS.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

/// Epsilon inside every layer/instance normalization denominator.
pub const NORM_EPS: f64 = 1e-5;

pub mod attention;
pub mod codec;
pub mod error;
pub mod format;
pub mod fusion;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod profile;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod volume;

pub use model::{AxialFusionUNet, ModelConfig};
pub use optim::TrainConfig;
pub use tensor::{Tape, TensorId};
pub use volume::{LabelVolume, Volume};
