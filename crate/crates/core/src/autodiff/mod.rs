//! Reverse-mode differentiation, parameters, optimizer and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;

pub use gradcheck::{grad_check, GradCheckConfig, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, lr_schedule, swa_average, AdamConfig, SwaAccumulator};
pub use params::{init_normal, ParamId, ParamStore};
