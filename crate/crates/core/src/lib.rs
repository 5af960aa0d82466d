pub mod cli;
pub mod error;
pub mod grid;
pub mod ode;
pub mod pde;
pub mod stpcnn;
pub mod tensor;
pub mod wave;

pub use error::{Error, Result};
