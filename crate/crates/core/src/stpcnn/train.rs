use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Layout, Stpcnn, StpcnnConfig};
use super::physics::Physics;
use super::rollout::unroll;
use crate::error::{Error, Result};
use crate::grid::GridSequence;
use crate::tensor::{AdamConfig, AdamState, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch: usize,
    pub lr: f64,
    /// Epochs without validation improvement before the learning rate is
    /// cut and scheduled sampling starts.
    pub patience: usize,
    pub lr_decay: f64,
    /// Epochs over which the teacher-forcing probability falls from 1 to 0
    /// once scheduled sampling is active.
    pub anneal_epochs: usize,
    /// Teacher-forced frames before the validation pass runs closed loop.
    pub val_tf_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 16,
            lr: 0.01,
            patience: 20,
            lr_decay: 0.5,
            anneal_epochs: 50,
            val_tf_steps: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.patience == 0 {
            return Err(Error::config("epochs, batch and patience must be >= 1"));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr must be positive and lr_decay in (0, 1]"));
        }
        if self.val_tf_steps == 0 {
            return Err(Error::config("val_tf_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Mean absolute and mean squared error parts of a loss, per scored frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
    pub lr: f64,
    pub teacher_prob: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Stpcnn,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Optimizer state after the last epoch.
    pub optimizer: AdamState,
    pub history: Vec<EpochLog>,
}

/// `sum_t (mean|S - S_hat| + mean (S - S_hat)^2)` over the predictions of
/// frames `1..=predictions.len()`, means taken over active cells and batch.
pub fn sequence_loss(
    tape: &mut Tape,
    predictions: &[Var],
    batch: &[&GridSequence],
    layout: &Layout,
) -> Result<(Var, LossParts)> {
    let active = batch[0].active_cells() * batch.len();
    let k = 1.0 / active as f64;
    let mut total: Option<Var> = None;
    let (mut mae, mut mse) = (0.0, 0.0);
    for (t, &pred) in predictions.iter().enumerate() {
        let mut col = Vec::with_capacity(batch.len() * layout.cells());
        for s in batch {
            col.extend(layout.to_rows(s.frame(t + 1)));
        }
        let target = tape.constant(Tensor::new([col.len(), 1], col)?);
        let r = tape.sub(pred, target)?;
        let a = tape.abs(r)?;
        let a = tape.sum(a)?;
        let a = tape.scale(a, k)?;
        let q = tape.square(r)?;
        let q = tape.sum(q)?;
        let q = tape.scale(q, k)?;
        mae += tape.value(a).item()?;
        mse += tape.value(q).item()?;
        let step = tape.add(a, q)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, step)?,
            None => step,
        });
    }
    let total = total.ok_or_else(|| Error::contract("no predictions to score"))?;
    let n = predictions.len() as f64;
    let loss = tape.value(total).item()?;
    Ok((
        total,
        LossParts {
            loss,
            mae: mae / n,
            mse: mse / n,
        },
    ))
}

/// Validation loss: teacher-forced for `tf_steps` frames, then closed loop
/// to the end of each sequence.
pub fn validation_loss(
    model: &Stpcnn,
    data: &[GridSequence],
    physics: &Physics,
    tf_steps: usize,
) -> Result<LossParts> {
    let mut acc = LossParts::default();
    for seq in data {
        let layout = Layout::row_major(seq.height(), seq.width());
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, false);
        let steps = seq.frames() - 1;
        let out = unroll(
            &mut tape,
            model,
            &p,
            &[seq],
            steps,
            &mut |t| t < tf_steps,
            physics,
            &layout,
        )?;
        let (_, parts) = sequence_loss(&mut tape, &out.predictions, &[seq], &layout)?;
        acc.loss += parts.loss;
        acc.mae += parts.mae;
        acc.mse += parts.mse;
    }
    let n = data.len().max(1) as f64;
    Ok(LossParts {
        loss: acc.loss / n,
        mae: acc.mae / n,
        mse: acc.mse / n,
    })
}

fn check_corpus(train: &[GridSequence], val: &[GridSequence]) -> Result<()> {
    let first = train
        .first()
        .ok_or_else(|| Error::config("empty training split"))?;
    if val.is_empty() {
        return Err(Error::config("empty validation split"));
    }
    for s in train.iter().chain(val) {
        if (s.height(), s.width()) != (first.height(), first.width()) || s.mask() != first.mask() {
            return Err(Error::config("all sequences must share grid size and mask"));
        }
        if s.frames() < 3 {
            return Err(Error::config("sequences need at least 3 frames"));
        }
    }
    Ok(())
}

/// Train a fresh model. Learning-rate decay and scheduled sampling start
/// when validation stalls for `patience` epochs.
pub fn train(
    model_config: StpcnnConfig,
    train_data: &[GridSequence],
    val_data: &[GridSequence],
    physics: &Physics,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_corpus(train_data, val_data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Stpcnn::new(model_config, rng.random())?;
    let mut opt = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let layout = Layout::row_major(train_data[0].height(), train_data[0].width());

    let mut best: (f64, usize, ParamSet) = (f64::INFINITY, 0, model.params.clone());
    let mut since_best = 0;
    let mut sampling_from: Option<usize> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut last_good = model.params.clone();

    for epoch in 0..cfg.epochs {
        let teacher_prob = match sampling_from {
            Some(s) => (1.0 - (epoch - s) as f64 / cfg.anneal_epochs.max(1) as f64).max(0.0),
            None => 1.0,
        };
        order.shuffle(&mut rng);
        let mut acc = LossParts::default();
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&GridSequence> = chunk.iter().map(|&k| &train_data[k]).collect();
            let steps = batch.iter().map(|s| s.frames()).min().expect("non-empty") - 1;
            let draws: Vec<bool> = (0..steps)
                .map(|_| rng.random::<f64>() < teacher_prob)
                .collect();
            let step = (|| -> Result<LossParts> {
                let mut tape = Tape::new();
                let p = model.params.bind(&mut tape, true);
                let out = unroll(
                    &mut tape,
                    &model,
                    &p,
                    &batch,
                    steps,
                    &mut |t| draws[t],
                    physics,
                    &layout,
                )?;
                let (loss, parts) = sequence_loss(&mut tape, &out.predictions, &batch, &layout)?;
                let mut grads = tape.backward(loss)?;
                let g = model.params.collect_grads(&p, &mut grads);
                opt.step(&mut model.params, &g)?;
                Ok(parts)
            })();
            match step {
                Ok(parts) if parts.loss.is_finite() && model.params.is_finite() => {
                    acc.loss += parts.loss;
                    acc.mae += parts.mae;
                    acc.mse += parts.mse;
                    batches += 1;
                    last_good.clone_from(&model.params);
                }
                Ok(_) | Err(Error::Numerics(_)) => {
                    return Err(Error::Training {
                        epoch,
                        reason: "non-finite loss while training the forecaster".into(),
                        last_finite: Some(Box::new(last_good)),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let n = batches as f64;
        let train_parts = LossParts {
            loss: acc.loss / n,
            mae: acc.mae / n,
            mse: acc.mse / n,
        };
        let val = validation_loss(&model, val_data, physics, cfg.val_tf_steps)?;
        if !val.loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "non-finite validation loss".into(),
                last_finite: Some(Box::new(best.2)),
            });
        }
        log::info!(
            "epoch {epoch}: train {:.4e} val {:.4e} (mse {:.3e}) lr {:.2e} teacher {:.2}",
            train_parts.loss,
            val.loss,
            val.mse,
            opt.config.lr,
            teacher_prob
        );
        history.push(EpochLog {
            epoch,
            train: train_parts,
            val,
            lr: opt.config.lr,
            teacher_prob,
        });
        if val.loss < best.0 {
            best = (val.loss, epoch, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                opt.config.lr *= cfg.lr_decay;
                sampling_from.get_or_insert(epoch + 1);
                since_best = 0;
            }
        }
    }
    let (best_val, best_epoch, params) = best;
    let model = Stpcnn::with_params(model_config, params)?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val,
        optimizer: opt,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::{simulate_corpus, WaveConfig};

    #[test]
    fn loss_of_perfect_prediction_is_zero() {
        let base = WaveConfig {
            height: 4,
            width: 4,
            center: (1.0, 2.0),
            steps: 6,
            ..WaveConfig::default()
        };
        let seqs = simulate_corpus(&base, 1, 3).unwrap();
        let layout = Layout::row_major(4, 4);
        let mut tape = Tape::new();
        let preds: Vec<Var> = (1..6)
            .map(|t| tape.constant(Tensor::new([16, 1], seqs[0].frame(t).to_vec()).unwrap()))
            .collect();
        let (_, parts) = sequence_loss(&mut tape, &preds, &[&seqs[0]], &layout).unwrap();
        assert_eq!(parts.loss, 0.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = WaveConfig {
            height: 4,
            width: 4,
            center: (1.0, 1.0),
            steps: 5,
            ..WaveConfig::default()
        };
        let b = WaveConfig {
            height: 5,
            ..a.clone()
        };
        let ta = simulate_corpus(&a, 1, 0).unwrap();
        let tb = simulate_corpus(&b, 1, 0).unwrap();
        let r = train(
            StpcnnConfig::default(),
            &ta,
            &tb,
            &Physics::None,
            &TrainConfig::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
