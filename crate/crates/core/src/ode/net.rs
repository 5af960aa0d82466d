use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dopri5::{dopri5, dopri5_replay, Dopri5Config};
use super::features::frame_derivatives;
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::tensor::{Bound, Linear, ParamSet, Tape, Tensor, Var};

/// Encoder inputs: `u(t), u(t-1), u, u_x, u_y, u_xx, u_yy, boundary_flag`.
pub const INPUTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdeNetConfig {
    pub latent: usize,
    pub hidden: usize,
    pub solver: Dopri5Config,
}

impl Default for OdeNetConfig {
    fn default() -> Self {
        Self {
            latent: 50,
            hidden: 50,
            solver: Dopri5Config::default(),
        }
    }
}

/// Encoder (linear + relu), latent vector field integrated over `[0, 1]`,
/// linear decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeNet {
    pub config: OdeNetConfig,
    pub params: ParamSet,
    encoder: Linear,
    field_in: Linear,
    field_out: Linear,
    decoder: Linear,
}

impl OdeNet {
    fn build(
        config: OdeNetConfig,
        mut make: impl FnMut(&mut ParamSet, &str, usize, usize) -> Linear,
    ) -> Self {
        let mut params = ParamSet::new();
        let encoder = make(&mut params, "ode.encoder", INPUTS, config.latent);
        let field_in = make(&mut params, "ode.field.0", config.latent, config.hidden);
        let field_out = make(&mut params, "ode.field.1", config.hidden, config.latent);
        let decoder = make(&mut params, "ode.decoder", config.latent, 1);
        Self {
            config,
            params,
            encoder,
            field_in,
            field_out,
            decoder,
        }
    }

    pub fn new(config: OdeNetConfig, seed: u64) -> Result<Self> {
        config.solver.validate()?;
        if config.latent == 0 || config.hidden == 0 {
            return Err(Error::config("latent and hidden widths must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |p, n, i, o| {
            Linear::new(p, n, i, o, &mut rng)
        }))
    }

    pub fn zeros(config: OdeNetConfig) -> Self {
        Self::build(config, Linear::zeros)
    }

    pub fn with_params(config: OdeNetConfig, params: ParamSet) -> Result<Self> {
        let mut net = Self::zeros(config);
        net.params.check_layout(&params)?;
        net.params = params;
        Ok(net)
    }

    /// Latent vector field `W2 relu(W1 z + b1) + b2` on plain rows.
    fn field_plain(&self, z: &[f64], rows: usize) -> Vec<f64> {
        let mut h = self.field_in.apply(&self.params, z, rows);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.field_out.apply(&self.params, &h, rows)
    }

    fn field_tape(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        let h = self.field_in.forward(tape, p, z)?;
        let h = tape.relu(h)?;
        self.field_out.forward(tape, p, h)
    }

    /// Encoded latent rows and the accepted solver steps for a batch.
    ///
    /// The batch is integrated as one system, so step sizes are shared by
    /// all rows.
    pub fn solve(&self, inputs: &[[f64; INPUTS]]) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = inputs.len();
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let mut z0 = self.encoder.apply(&self.params, &flat, rows);
        z0.iter_mut().for_each(|v| *v = v.max(0.0));
        let sol = dopri5(
            |_, z| Ok(self.field_plain(z, rows)),
            &z0,
            0.0,
            1.0,
            &self.config.solver,
        )?;
        Ok((sol.z, sol.steps))
    }

    /// Next-value predictions for a batch of encoder inputs.
    pub fn predict(&self, inputs: &[[f64; INPUTS]]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let (z, _) = self.solve(inputs)?;
        Ok(self.decoder.apply(&self.params, &z, inputs.len()))
    }

    /// Tape forward over a frozen step sequence; `inputs: [B, 8]` -> `[B, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, inputs: Var, steps: &[f64]) -> Result<Var> {
        let z0 = self.encoder.forward(tape, p, inputs)?;
        let z0 = tape.relu(z0)?;
        let z = dopri5_replay(tape, |t, z| self.field_tape(t, p, z), z0, steps)?;
        self.decoder.forward(tape, p, z)
    }

    /// Encoder inputs for every active cell, with their row-major indices.
    pub fn frame_inputs(
        prev: &GridField,
        curr: &GridField,
        mask: &[bool],
        dx: f64,
        dy: f64,
    ) -> Result<(Vec<[f64; INPUTS]>, Vec<usize>)> {
        prev.check_same_dims(curr)?;
        if mask.len() != curr.data().len() {
            return Err(Error::shape(format!(
                "mask of {} cells for {:?} frame",
                mask.len(),
                curr.dims()
            )));
        }
        let derivs = frame_derivatives(curr, mask, dx, dy);
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for (c, d) in derivs.iter().enumerate() {
            if mask[c] {
                rows.push([
                    curr.data()[c],
                    prev.data()[c],
                    d[0],
                    d[1],
                    d[2],
                    d[3],
                    d[4],
                    d[5],
                ]);
                cells.push(c);
            }
        }
        Ok((rows, cells))
    }

    /// Predicted next frame; masked cells stay 0.
    pub fn predict_frame(
        &self,
        prev: &GridField,
        curr: &GridField,
        mask: &[bool],
        dx: f64,
        dy: f64,
    ) -> Result<GridField> {
        let (rows, cells) = Self::frame_inputs(prev, curr, mask, dx, dy)?;
        let values = self.predict(&rows)?;
        let (h, w) = curr.dims();
        let mut out = GridField::zeros(h, w);
        for (c, v) in cells.into_iter().zip(values) {
            out.data_mut()[c] = v;
        }
        Ok(out)
    }

    /// Closed loop from two known frames; returns `steps` new frames.
    pub fn rollout(
        &self,
        u0: &GridField,
        u1: &GridField,
        mask: &[bool],
        steps: usize,
        dx: f64,
        dy: f64,
    ) -> Result<Vec<GridField>> {
        let mut out: Vec<GridField> = Vec::with_capacity(steps);
        let (mut prev, mut curr) = (u0.clone(), u1.clone());
        for _ in 0..steps {
            let next = self.predict_frame(&prev, &curr, mask, dx, dy)?;
            prev = std::mem::replace(&mut curr, next.clone());
            out.push(next);
        }
        Ok(out)
    }

    pub(crate) fn inputs_tensor(inputs: &[[f64; INPUTS]]) -> Tensor {
        Tensor::new(
            [inputs.len(), INPUTS],
            inputs.iter().flatten().copied().collect(),
        )
        .expect("B x 8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: f64) -> [f64; INPUTS] {
        [0.1 * k, -0.2, 0.1 * k, 0.05, -0.03, 0.4, -0.1, 0.0]
    }

    #[test]
    fn zero_net_predicts_zero() {
        let net = OdeNet::zeros(OdeNetConfig::default());
        assert!(net
            .predict(&[row(1.0), row(2.0)])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_prediction() {
        let net = OdeNet::new(OdeNetConfig::default(), 11).unwrap();
        let rows = [row(1.0), row(-3.0), row(0.5)];
        assert_eq!(net.predict(&rows).unwrap(), net.predict(&rows).unwrap());
    }

    #[test]
    fn tape_replay_matches_plain() {
        let net = OdeNet::new(OdeNetConfig::default(), 5).unwrap();
        let rows = [row(1.0), row(2.0)];
        let (_, steps) = net.solve(&rows).unwrap();
        let plain = net.predict(&rows).unwrap();
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape, false);
        let x = tape.constant(OdeNet::inputs_tensor(&rows));
        let y = net.forward(&mut tape, &p, x, &steps).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_cells_stay_zero_in_prediction() {
        let net = OdeNet::new(OdeNetConfig::default(), 2).unwrap();
        let f = GridField::from_fn(3, 3, |i, j| (i + j) as f64 * 0.1);
        let mut mask = vec![true; 9];
        mask[4] = false;
        let out = net.predict_frame(&f, &f, &mask, 1.0, 1.0).unwrap();
        assert_eq!(out.at(1, 1), 0.0);
    }
}
