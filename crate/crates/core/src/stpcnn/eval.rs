use serde::{Deserialize, Serialize};

use super::model::Stpcnn;
use super::physics::Physics;
use super::rollout::rollout;
use crate::error::{Error, Result};
use crate::grid::GridSequence;

/// Mean and population standard deviation over test sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Squared and absolute error of one predicted frame over active cells.
fn frame_errors(pred: &[f64], truth: &[f64], mask: &[bool]) -> (f64, f64) {
    let (mut sq, mut ab, mut n) = (0.0, 0.0, 0usize);
    for ((p, t), &m) in pred.iter().zip(truth).zip(mask) {
        if m {
            sq += (p - t).powi(2);
            ab += (p - t).abs();
            n += 1;
        }
    }
    (sq / n as f64, ab / n as f64)
}

/// Per-frame `(mse, mae)` of a closed-loop forecast of frames
/// `tf_steps..=horizon_to` after `tf_steps` teacher-forced frames.
pub fn closed_loop_errors(
    model: &Stpcnn,
    seq: &GridSequence,
    physics: &Physics,
    tf_steps: usize,
    horizon_to: usize,
) -> Result<Vec<(f64, f64)>> {
    if horizon_to >= seq.frames() || tf_steps > horizon_to {
        return Err(Error::contract(format!(
            "cannot score frames {tf_steps}..={horizon_to} of a {}-frame sequence",
            seq.frames()
        )));
    }
    let r = rollout(model, seq, tf_steps, horizon_to - tf_steps, physics)?;
    Ok((tf_steps..=horizon_to)
        .map(|t| frame_errors(r.predictions.frame(t - 1), seq.frame(t), seq.mask()))
        .collect())
}

/// Mean over frames `2..T` of the teacher-forced one-step error. Frame 1 is
/// skipped because the physics path needs two consumed frames.
pub fn single_step_errors(
    model: &Stpcnn,
    seq: &GridSequence,
    physics: &Physics,
) -> Result<(f64, f64)> {
    if seq.frames() < 3 {
        return Err(Error::contract(
            "single-step scoring needs at least 3 frames",
        ));
    }
    let r = rollout(model, seq, seq.frames() - 1, 0, physics)?;
    let errs: Vec<(f64, f64)> = (2..seq.frames())
        .map(|t| frame_errors(r.predictions.frame(t - 1), seq.frame(t), seq.mask()))
        .collect();
    let n = errs.len() as f64;
    Ok((
        errs.iter().map(|e| e.0).sum::<f64>() / n,
        errs.iter().map(|e| e.1).sum::<f64>() / n,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStep {
    pub tf_steps: usize,
    pub mse: Stat,
    /// `(frame, mse, mae)` averaged over sequences.
    pub curve: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub single_step: Stat,
    pub multi_step: Vec<MultiStep>,
}

pub fn evaluate(
    model: &Stpcnn,
    data: &[GridSequence],
    physics: &Physics,
    tf_list: &[usize],
    horizon_to: usize,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::config("no test sequences"));
    }
    let singles = data
        .iter()
        .map(|s| single_step_errors(model, s, physics).map(|e| e.0))
        .collect::<Result<Vec<_>>>()?;
    let mut multi_step = Vec::with_capacity(tf_list.len());
    for &tf in tf_list {
        let per_seq = data
            .iter()
            .map(|s| closed_loop_errors(model, s, physics, tf, horizon_to))
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = per_seq
            .iter()
            .map(|e| e.iter().map(|x| x.0).sum::<f64>() / e.len() as f64)
            .collect();
        let n = per_seq.len() as f64;
        let curve = (0..per_seq[0].len())
            .map(|k| {
                let mse = per_seq.iter().map(|e| e[k].0).sum::<f64>() / n;
                let mae = per_seq.iter().map(|e| e[k].1).sum::<f64>() / n;
                (tf + k, mse, mae)
            })
            .collect();
        multi_step.push(MultiStep {
            tf_steps: tf,
            mse: Stat::of(&means),
            curve,
        });
    }
    Ok(EvalReport {
        single_step: Stat::of(&singles),
        multi_step,
    })
}
