//! Video super-resolution with content-aware scan orders and selective
//! state-space blocks.
//!
//! Data flow for one clip: shallow convolution features, a shared scan order
//! from the spectral ordering of a token similarity graph ([`scan_compass`]),
//! patch-aligned and interleaved multi-frame token sequences
//! ([`sequentialize`]), windowed attention fused with a selective scan
//! ([`glssb`], [`ssm_kernel`]), bidirectional recurrent propagation
//! ([`propagation`]), and pixel-shuffle reconstruction over a bicubic base
//! ([`pipeline`]).

pub mod error;
pub mod glssb;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod params;
pub mod pipeline;
pub mod propagation;
pub mod scan_compass;
pub mod sequentialize;
pub mod ssm_kernel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
