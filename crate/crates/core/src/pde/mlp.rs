use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Bound, Linear, ParamSet, Tape, Tensor, Var};

pub const HIDDEN_LAYERS: usize = 4;
pub const WIDTH: usize = 50;

/// Fully connected `(x, y, t) -> u` with tanh hidden layers and a linear
/// output. Inputs are expected in normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMlp {
    pub params: ParamSet,
    layers: Vec<Linear>,
}

impl CoordMlp {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layers = Self::dims()
            .enumerate()
            .map(|(k, (i, o))| Linear::new(&mut params, &format!("mlp.{k}"), i, o, &mut rng))
            .collect();
        Self { params, layers }
    }

    pub fn zeros() -> Self {
        let mut params = ParamSet::new();
        let layers = Self::dims()
            .enumerate()
            .map(|(k, (i, o))| Linear::zeros(&mut params, &format!("mlp.{k}"), i, o))
            .collect();
        Self { params, layers }
    }

    pub fn scale_first_layer(&mut self, gain: f64) {
        let w = self.layers[0].weight;
        self.params
            .get_mut(w)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= gain);
    }

    /// Same architecture, parameters taken from `params` (layout checked).
    pub fn with_params(params: ParamSet) -> Result<Self> {
        let mut net = Self::zeros();
        net.params.check_layout(&params)?;
        net.params = params;
        Ok(net)
    }

    fn dims() -> impl Iterator<Item = (usize, usize)> {
        let mut d = vec![3];
        d.extend([WIDTH; HIDDEN_LAYERS]);
        d.push(1);
        (0..d.len() - 1).map(move |k| (d[k], d[k + 1]))
    }

    /// `points: [n, 3]` -> `[n, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, points: Var) -> Result<Var> {
        let mut h = points;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if k < last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Plain evaluation at normalized `(x, y, t)` points.
    pub fn predict(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let rows = points.len();
        let mut h: Vec<f64> = points.iter().flatten().copied().collect();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&self.params, &h, rows);
            if k < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        self.predict(&[[x, y, t]])[0]
    }

    pub(crate) fn points_tensor(points: &[[f64; 3]]) -> Tensor {
        Tensor::new(
            [points.len(), 3],
            points.iter().flatten().copied().collect(),
        )
        .expect("n x 3")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = CoordMlp::zeros();
        assert!(net
            .predict(&[[0.1, -0.4, 0.9], [1.0, 1.0, 1.0]])
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_nets_agree() {
        let (a, b) = (CoordMlp::new(3), CoordMlp::new(3));
        assert_eq!(a.eval(0.2, 0.3, -0.1), b.eval(0.2, 0.3, -0.1));
        assert_ne!(
            a.eval(0.2, 0.3, -0.1),
            CoordMlp::new(4).eval(0.2, 0.3, -0.1)
        );
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let net = CoordMlp::new(1);
        let pts = [[0.5, -0.5, 0.25], [-1.0, 0.0, 1.0]];
        let mut tape = Tape::new();
        let b = net.params.bind(&mut tape, false);
        let x = tape.constant(CoordMlp::points_tensor(&pts));
        let y = net.forward(&mut tape, &b, x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(net.predict(&pts)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
