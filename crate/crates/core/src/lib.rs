//! AF-KAN: Kolmogorov-Arnold layers built from activation-function
//! combinations, with attention-based reduction of the basis axis.
//!
//! The crate carries its own small reverse-mode autodiff engine
//! ([`tape`]), the layer zoo ([`layers`]), parameter and FLOP audits
//! ([`audit`]), an IDX loader for MNIST-style data ([`data`]) and the
//! AdamW training harness ([`train`]).

pub mod activations;
pub mod audit;
pub mod basis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod normalization;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use activations::Activation;
pub use error::{Error, Result};
pub use layers::{Model, ModelSpec, Variant};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
