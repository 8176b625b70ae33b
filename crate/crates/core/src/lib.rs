//! Slow-fast hyper-kernel networks.
//!
//! Slow coordinate networks generate kernels, the HyperZZW operators turn
//! them into input-dependent fast weights, and nine-branch SFNE blocks are
//! stacked into a residual-free classifier.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod hyperzzw;
pub mod losses;
pub mod model;
pub mod sfne;
pub mod slownet;
pub mod standardize;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
