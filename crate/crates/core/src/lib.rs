//! Attention incorporate layers (AIL) in a small, dependency-light neural
//! network kit: tensors and kernels, a reverse-mode tape with a
//! finite-difference oracle, network builders, data pipelines and training.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the two precisions used in practice.

// `!(x > 0.0)` is the validation idiom here: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ail;
pub mod autodiff;
pub mod checks;
pub mod data;
pub mod error;
pub mod kernels;
pub mod nets;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod viz;

pub use ail::{AilConfig, AilKernel, AilParams, GradMode};
pub use autodiff::{finite_diff_check, FdOptions, GradCheckReport, ParamStore, Tape};
pub use error::{Error, Result};
pub use nets::{presets, Mode, Network, NetworkSpec};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
