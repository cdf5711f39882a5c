//! Continuous convolutional neural networks on the CPU.
//!
//! Kernels are produced by a small coordinate network ([`kernelgen`]),
//! applied with FFT long convolutions ([`conv`]) and trained end to end with
//! the reverse-mode differentiation in [`autodiff`].

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod fft;
pub mod kernelgen;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
