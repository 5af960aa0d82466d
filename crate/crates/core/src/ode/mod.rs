//! ODE-informed network: per-cell encoder, latent ODE integrated by an
//! adaptive Dormand–Prince solver, linear decoder.

mod dopri5;
mod features;
mod net;
mod train;

pub use dopri5::{
    dopri5, dopri5_fixed, dopri5_replay, dopri5_steps, Dopri5Config, Solution, StepRecord,
};
pub use features::{frame_derivatives, spatial_derivatives, Derivatives};
pub use net::{OdeNet, OdeNetConfig, INPUTS};
pub use train::{
    persistence_mse, single_step_mse, train_ode, train_ode_corpus, training_pairs, OdeEpochLog,
    OdeFit, OdeFitConfig,
};
