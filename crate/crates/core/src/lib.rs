//! Thermal surrogate-modelling toolkit for machine tools.

pub mod autodiff;
pub mod dataset;
pub mod error_chain;
pub mod models;
pub mod report;
pub mod scalar;
pub mod select;
pub mod tensor;
pub mod thermal;
pub mod train;

/// Default scalar type for applications; the whole crate is generic
/// over [`scalar::Scalar`], with `f64` as the concrete workhorse.
pub type Real = f64;

/// Tensor of [`Real`].
pub type RealTensor = tensor::Tensor<Real>;
