use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{OdeNet, OdeNetConfig, INPUTS};
use crate::error::{Error, Result};
use crate::grid::GridSequence;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdeFitConfig {
    pub net: OdeNetConfig,
    /// Weight on the parameter norm.
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    /// `(point, t)` pairs per optimizer step.
    pub batch: usize,
    pub seed: u64,
    pub dx: f64,
    pub dy: f64,
    pub log_every: usize,
}

impl Default for OdeFitConfig {
    fn default() -> Self {
        Self {
            net: OdeNetConfig::default(),
            alpha: 1e-4,
            lr: 3e-3,
            epochs: 30,
            batch: 256,
            seed: 0,
            dx: 1.0,
            dy: 1.0,
            log_every: 1,
        }
    }
}

impl OdeFitConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.solver.validate()?;
        if !(self.alpha >= 0.0) {
            return Err(Error::config("alpha must be >= 0"));
        }
        if !(self.lr > 0.0 && self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::config("lr, dx and dy must be positive"));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs and batch must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeEpochLog {
    pub epoch: usize,
    /// Mean over the epoch's batches of `|u - u_hat|_2 + alpha |theta|_2`.
    pub loss: f64,
    /// Mean squared single-step error over the epoch's pairs.
    pub mse: f64,
}

#[derive(Clone, Debug)]
pub struct OdeFit {
    pub net: OdeNet,
    pub history: Vec<OdeEpochLog>,
}

/// Every `(inputs, target)` pair of a sequence: frames `t-1, t` predict `t+1`.
pub fn training_pairs(
    data: &GridSequence,
    dx: f64,
    dy: f64,
) -> Result<(Vec<[f64; INPUTS]>, Vec<f64>)> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for t in 1..data.frames().saturating_sub(1) {
        let (rows, cells) =
            OdeNet::frame_inputs(&data.field(t - 1), &data.field(t), data.mask(), dx, dy)?;
        let next = data.frame(t + 1);
        inputs.extend(rows);
        targets.extend(cells.into_iter().map(|c| next[c]));
    }
    Ok((inputs, targets))
}

pub fn train_ode(data: &GridSequence, cfg: &OdeFitConfig) -> Result<OdeFit> {
    train_ode_corpus(std::slice::from_ref(data), cfg)
}

/// Train on the pooled pairs of several sequences.
pub fn train_ode_corpus(data: &[GridSequence], cfg: &OdeFitConfig) -> Result<OdeFit> {
    cfg.validate()?;
    if let Some(short) = data.iter().find(|s| s.frames() < 3) {
        return Err(Error::config(format!(
            "ODE training needs at least 3 frames, got {}",
            short.frames()
        )));
    }
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for seq in data {
        let (i, t) = training_pairs(seq, cfg.dx, cfg.dy)?;
        inputs.extend(i);
        targets.extend(t);
    }
    if inputs.is_empty() {
        return Err(Error::config("sequence has no active cells"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = OdeNet::new(cfg.net, rng.random())?;
    let mut opt = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &net.params,
    );
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::new();
    let mut last_good = net.params.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut sq_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let rows: Vec<[f64; INPUTS]> = chunk.iter().map(|&k| inputs[k]).collect();
            let target: Vec<f64> = chunk.iter().map(|&k| targets[k]).collect();
            let step = (|| -> Result<(f64, f64)> {
                let (_, steps) = net.solve(&rows)?;
                let mut tape = Tape::new();
                let p = net.params.bind(&mut tape, true);
                let x = tape.constant(OdeNet::inputs_tensor(&rows));
                let y = net.forward(&mut tape, &p, x, &steps)?;
                let u = tape.constant(Tensor::new([rows.len(), 1], target)?);
                let r = tape.sub(y, u)?;
                let r2 = tape.square(r)?;
                let sq = tape.sum(r2)?;
                let fit = tape.sqrt(sq)?;
                let mut norm = Vec::with_capacity(p.vars().len());
                for &v in p.vars() {
                    let s = tape.square(v)?;
                    norm.push(tape.sum(s)?);
                }
                let mut total = norm[0];
                for &n in &norm[1..] {
                    total = tape.add(total, n)?;
                }
                let theta = tape.sqrt(total)?;
                let reg = tape.scale(theta, cfg.alpha)?;
                let loss = tape.add(fit, reg)?;
                let values = (tape.value(loss).item()?, tape.value(sq).item()?);
                let mut grads = tape.backward(loss)?;
                let g = net.params.collect_grads(&p, &mut grads);
                opt.step(&mut net.params, &g)?;
                Ok(values)
            })();
            match step {
                Ok((loss, sq)) if loss.is_finite() && net.params.is_finite() => {
                    loss_sum += loss;
                    sq_sum += sq;
                    batches += 1;
                    last_good.clone_from(&net.params);
                }
                Ok(_) | Err(Error::Numerics(_)) => {
                    return Err(Error::Training {
                        epoch,
                        reason: "non-finite loss while fitting the ODE network".into(),
                        last_finite: Some(Box::new(last_good)),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let log = OdeEpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            mse: sq_sum / inputs.len() as f64,
        };
        if epoch % cfg.log_every.max(1) == 0 || epoch + 1 == cfg.epochs {
            log::info!(
                "ode epoch {epoch}: loss {:.4e} mse {:.4e}",
                log.loss,
                log.mse
            );
        }
        history.push(log);
    }
    Ok(OdeFit { net, history })
}

/// Mean squared single-step error of `net` over a sequence's active cells.
pub fn single_step_mse(net: &OdeNet, data: &GridSequence, dx: f64, dy: f64) -> Result<f64> {
    let (inputs, targets) = training_pairs(data, dx, dy)?;
    if inputs.is_empty() {
        return Err(Error::config(
            "sequence too short for single-step evaluation",
        ));
    }
    let mut sq = 0.0;
    for (rows, target) in inputs.chunks(1024).zip(targets.chunks(1024)) {
        let pred = net.predict(rows)?;
        sq += pred
            .iter()
            .zip(target)
            .map(|(p, u)| (p - u).powi(2))
            .sum::<f64>();
    }
    Ok(sq / inputs.len() as f64)
}

/// Mean squared error of `u(t+1) ~ u(t)` over the pairs used by
/// [`single_step_mse`].
pub fn persistence_mse(data: &GridSequence) -> Result<f64> {
    if data.frames() < 3 {
        return Err(Error::config(
            "sequence too short for single-step evaluation",
        ));
    }
    let mut sq = 0.0;
    let mut n = 0usize;
    for t in 1..data.frames() - 1 {
        let (now, next) = (data.frame(t), data.frame(t + 1));
        for c in (0..data.frame_len()).filter(|&c| data.mask()[c]) {
            sq += (next[c] - now[c]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::config("sequence has no active cells"));
    }
    Ok(sq / n as f64)
}
