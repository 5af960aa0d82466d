//! Per-cell recurrent forecaster coupled with a numeric physics step.
//!
//! Every grid cell runs the same transition net (TN) and forecasting net
//! (FN). Lateral vectors emitted by a cell at step `t` are averaged into
//! its neighbors' inputs at `t + 1`. A coupling layer fuses the FN output
//! with the physics backend's one-step prediction.

pub mod checkpoint;
mod eval;
mod model;
mod physics;
mod rollout;
mod train;

pub use checkpoint::{load_ode, load_stpcnn, Checkpoint, CheckpointConfig, ModelKind};
pub use eval::{closed_loop_errors, evaluate, single_step_errors, EvalReport, MultiStep, Stat};
pub use model::{
    aggregate_lateral, lateral_operator, CouplingParams, FnParams, Layout, LstmCell, LstmState,
    Stpcnn, StpcnnConfig, TnParams,
};
pub use physics::{Physics, PhysicsSpec};
pub use rollout::{rollout, rollout_with_layout, unroll, Rollout, Unrolled};
pub use train::{
    sequence_loss, train, validation_loss, EpochLog, LossParts, TrainConfig, TrainOutcome,
};
