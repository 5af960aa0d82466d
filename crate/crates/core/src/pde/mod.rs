//! Equation discovery: fit a coordinate network to observations, recover
//! unit-norm coefficients over a fixed dictionary of derivative terms, and
//! step the recovered equation numerically.

mod coeffs;
mod dictionary;
mod fit;
mod mlp;
mod numeric;
mod oracle;

pub use coeffs::{
    pde_error, CoefficientsFile, PdeCoefficients, DICTIONARY, TERMS, U, U_T, U_TT, U_X, U_XX, U_Y,
    U_YY,
};
pub use dictionary::{dictionary_on_tape, eval_dictionary, Domain};
pub use fit::{
    pde_loss, to_physical, train_pde, PdeBatch, PdeEpochLog, PdeFit, PdeFitConfig, PdeLossParts,
};
pub use mlp::{CoordMlp, HIDDEN_LAYERS, WIDTH};
pub use numeric::{pde_numeric_step, pde_rollout, MIN_TT_WEIGHT};
pub use oracle::{svd_nullspace_oracle, NullSpace};
