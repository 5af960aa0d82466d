//! Dense `f64` tensors with define-by-run reverse-mode differentiation and
//! an Adam optimizer.
//!
//! Parameters live in a [`ParamSet`] outside the tape. A training step binds
//! them onto a fresh [`Tape`], runs the forward pass, calls
//! [`Tape::backward`] and hands the collected gradients to [`AdamState`].

mod adam;
mod gradcheck;
mod params;
mod tape;
mod value;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, relative_error, FD_STEP};
pub(crate) use params::{f64s_to_le, le_to_f64s};
pub use params::{Bound, Linear, ParamId, ParamSet};
pub use tape::{Gradients, SparseRows, Tape, Var};
pub use value::Tensor;
