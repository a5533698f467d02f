pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod nn;
pub mod report;
pub mod scalar;
pub mod sequence;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
