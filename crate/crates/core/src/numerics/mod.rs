//! Minimal tensor engine: kernels on plain tensors plus a reverse-mode tape.

pub mod autodiff;
pub mod ops;

pub use autodiff::{finite_difference_grad, relative_error, value_and_grad, Graph, NamedTensors, Var};
pub use ops::{
    bicubic_resize, bilinear_warp, charbonnier_loss, charbonnier_mean, conv2d, layer_norm, pixel_shuffle,
    pixel_unshuffle, softmax, CharbonnierConfig,
};
