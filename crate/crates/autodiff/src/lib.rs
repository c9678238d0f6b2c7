//! Minimal dense-tensor reverse-mode differentiation.
//!
//! Values are row-major `f64` [`Tensor`]s. Operations are recorded on a
//! [`Graph`] through [`Var`] handles and differentiated with
//! [`Graph::backward`]. Learned weights live in a [`ParamStore`] and are bound
//! onto a fresh graph for every forward pass.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, InputReport};
pub use graph::{concat_last, concat_rows, Gradients, Graph, Var};
pub use params::{uniform_fan_in, Bindings, ParamId, ParamStore, Parameter};
pub use tensor::{Mask, Tensor};
