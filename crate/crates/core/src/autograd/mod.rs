//! Reverse-mode differentiation, parameter storage and optimizers.

mod gradcheck;
mod graph;
mod optim;
mod params;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::{sgd_step, Sgd};
pub use params::{Component, Param, ParamGrads, ParamStore, Role};
