//! Central finite-difference oracle for tape gradients.

use super::{Bound, ParamSet, Tape, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// `|autodiff - fd| / (|fd| + 1e-8)`.
pub fn relative_error(autodiff: f64, fd: f64) -> f64 {
    (autodiff - fd).abs() / (fd.abs() + 1e-8)
}

fn eval_at<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(point.clone());
    let y = f(&mut tape, x)?;
    tape.value(y).item()
}

/// Max relative error between the tape gradient of scalar `f` at `point` and
/// central differences, over all coordinates.
pub fn grad_check<F>(f: F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let zeros = Tensor::zeros(point.shape().to_vec());
    let auto = grads.get(x).unwrap_or(&zeros);

    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let fp = eval_at(&f, &probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let fm = eval_at(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(auto.data()[i], fd));
    }
    Ok(worst)
}

/// Same check over every coordinate of every tensor in `params`.
pub fn grad_check_params<F>(f: F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let y = f(&mut tape, &b)?;
        tape.value(y).item()
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let y = f(&mut tape, &bound)?;
    let mut grads = tape.backward(y)?;
    let auto = params.collect_grads(&bound, &mut grads);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (t, g) in auto.iter().enumerate() {
        for i in 0..g.numel() {
            let orig = probe.tensors()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + FD_STEP;
            let fp = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig - FD_STEP;
            let fm = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g.data()[i], fd));
        }
    }
    Ok(worst)
}
