//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive as it executes; [`Graph::backward`]
//! replays the record in reverse to produce exact gradients. Models keep their
//! weights in a [`ParamSet`] and bind them onto a fresh graph per step.
//!
//! Everything is generic over [`Real`]: `f64` for gradient checks, `f32` for
//! training.

pub mod checkpoint;
mod conv;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod real;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig};
pub use params::{Bound, Param, ParamId, ParamSet};
pub use real::Real;
pub use tensor::Tensor;
