use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::positional_codes;
use crate::tensor::{Bound, Linear, ParamId, ParamSet, SparseRows, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LstmCell {
    /// `c = i*g`: the forget gate is computed but unused.
    Paper,
    /// `c = f*c_prev + i*g`.
    #[default]
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StpcnnConfig {
    pub positional_dim: usize,
    pub lateral_dim: usize,
    pub tn_hidden: usize,
    pub fusion_dim: usize,
    pub hidden: usize,
    pub lstm_cell: LstmCell,
    /// Force every incoming lateral vector to zero.
    pub zero_lateral: bool,
}

impl Default for StpcnnConfig {
    fn default() -> Self {
        Self {
            positional_dim: 16,
            lateral_dim: 8,
            tn_hidden: 32,
            fusion_dim: 32,
            hidden: 256,
            lstm_cell: LstmCell::Standard,
            zero_lateral: false,
        }
    }
}

impl StpcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.positional_dim < 2 || !self.positional_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "positional_dim must be even and >= 2, got {}",
                self.positional_dim
            )));
        }
        if [
            self.lateral_dim,
            self.tn_hidden,
            self.fusion_dim,
            self.hidden,
        ]
        .contains(&0)
        {
            return Err(Error::config("layer widths must be >= 1"));
        }
        Ok(())
    }
}

/// Transition net: `[p; L] -> relu -> relu -> L_enc`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TnParams {
    pub first: Linear,
    pub second: Linear,
}

impl TnParams {
    pub fn forward(&self, tape: &mut Tape, p: &Bound, code: Var, lateral: Var) -> Result<Var> {
        let x = tape.concat(&[code, lateral])?;
        let h = self.first.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let y = self.second.forward(tape, p, h)?;
        tape.relu(y)
    }
}

/// Forecasting net: fusion layer, LSTM, output layer `[S_he; L_hat]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FnParams {
    pub fusion: Linear,
    /// `[fusion_dim + hidden, 4 hidden]`, gate blocks input, forget,
    /// candidate, output.
    pub lstm_weight: ParamId,
    pub lstm_bias: ParamId,
    pub output: Linear,
    pub hidden: usize,
    pub forget: bool,
}

/// LSTM state for every row: `h` and `c`, each `[rows, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, rows: usize, hidden: usize) -> Self {
        let h = tape.constant(Tensor::zeros([rows, hidden]));
        let c = tape.constant(Tensor::zeros([rows, hidden]));
        Self { h, c }
    }
}

impl FnParams {
    /// One step for every row. Returns `(S_he [rows,1], L_hat [rows,lat], state)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        code: Var,
        value: Var,
        encoded: Var,
        state: LstmState,
    ) -> Result<(Var, Var, LstmState)> {
        let x = tape.concat(&[code, value, encoded])?;
        let f = self.fusion.forward(tape, p, x)?;
        let fh = tape.concat(&[f, state.h])?;
        let pre = tape.matmul(fh, p[self.lstm_weight])?;
        let out = tape.lstm_cell(pre, p[self.lstm_bias], state.c, self.forget)?;
        let h = tape.slice(out, 0, self.hidden)?;
        let c = tape.slice(out, self.hidden, 2 * self.hidden)?;
        let y = self.output.forward(tape, p, h)?;
        let s_he = tape.slice(y, 0, 1)?;
        let lat = tape.slice(y, 1, self.output.out_dim)?;
        let lat = tape.relu(lat)?;
        Ok((s_he, lat, LstmState { h, c }))
    }
}

/// Coupling layer `S = [S_he, S_ho] w + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingParams {
    pub layer: Linear,
}

impl CouplingParams {
    pub fn forward(&self, tape: &mut Tape, p: &Bound, s_he: Var, s_ho: Var) -> Result<Var> {
        let x = tape.concat(&[s_he, s_ho])?;
        self.layer.forward(tape, p, x)
    }

    /// `(w_he, w_ho, b)`.
    pub fn weights(&self, params: &ParamSet) -> (f64, f64, f64) {
        let w = params.get(self.layer.weight).data();
        (w[0], w[1], params.get(self.layer.bias).data()[0])
    }

    pub fn set_weights(&self, params: &mut ParamSet, w_he: f64, w_ho: f64, b: f64) {
        params
            .get_mut(self.layer.weight)
            .data_mut()
            .copy_from_slice(&[w_he, w_ho]);
        params.get_mut(self.layer.bias).data_mut()[0] = b;
    }
}

/// The full forecaster: one parameter set shared by every cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Stpcnn {
    pub config: StpcnnConfig,
    pub params: ParamSet,
    pub tn: TnParams,
    pub fnet: FnParams,
    pub coupling: CouplingParams,
}

impl Stpcnn {
    fn build(
        config: StpcnnConfig,
        mut make: impl FnMut(&mut ParamSet, &str, usize, usize) -> Linear,
    ) -> Self {
        let c = config;
        let mut params = ParamSet::new();
        let tn = TnParams {
            first: make(
                &mut params,
                "tn.0",
                c.positional_dim + c.lateral_dim,
                c.tn_hidden,
            ),
            second: make(&mut params, "tn.1", c.tn_hidden, c.lateral_dim),
        };
        let fusion = make(
            &mut params,
            "fn.fusion",
            c.positional_dim + 1 + c.lateral_dim,
            c.fusion_dim,
        );
        let lstm = make(
            &mut params,
            "fn.lstm",
            c.fusion_dim + c.hidden,
            4 * c.hidden,
        );
        let output = make(&mut params, "fn.output", c.hidden, 1 + c.lateral_dim);
        let fnet = FnParams {
            fusion,
            lstm_weight: lstm.weight,
            lstm_bias: lstm.bias,
            output,
            hidden: c.hidden,
            forget: c.lstm_cell == LstmCell::Standard,
        };
        let coupling = CouplingParams {
            layer: make(&mut params, "coupling", 2, 1),
        };
        Self {
            config,
            params,
            tn,
            fnet,
            coupling,
        }
    }

    pub fn new(config: StpcnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |p, n, i, o| {
            Linear::new(p, n, i, o, &mut rng)
        }))
    }

    pub fn zeros(config: StpcnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, Linear::zeros))
    }

    pub fn with_params(config: StpcnnConfig, params: ParamSet) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        model.params.check_layout(&params)?;
        model.params = params;
        Ok(model)
    }
}

/// Assignment of grid cells to tensor rows.
///
/// Row `b * cells + k` holds cell `order[k]` of batch entry `b`. Any order
/// gives the same per-cell results; the default is row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub order: Vec<usize>,
}

impl Layout {
    pub fn row_major(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            order: (0..height * width).collect(),
        }
    }

    pub fn permuted(height: usize, width: usize, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; height * width];
        for &c in &order {
            if c >= seen.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::contract("cell order must be a permutation"));
            }
        }
        if order.len() != seen.len() {
            return Err(Error::contract("cell order must cover every cell"));
        }
        Ok(Self {
            height,
            width,
            order,
        })
    }

    pub fn cells(&self) -> usize {
        self.order.len()
    }

    /// Row of each cell within one batch entry.
    pub fn rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.order.len()];
        for (k, &c) in self.order.iter().enumerate() {
            rank[c] = k;
        }
        rank
    }

    /// Positional codes in row order, repeated for `batch` entries.
    pub fn codes(&self, d: usize, batch: usize) -> Result<Tensor> {
        let codes = positional_codes(self.height, self.width, d)?;
        let mut data = Vec::with_capacity(batch * self.cells() * d);
        for _ in 0..batch {
            for &c in &self.order {
                data.extend_from_slice(&codes[c]);
            }
        }
        Tensor::new([batch * self.cells(), d], data)
    }

    /// Per-row mask column `[batch * cells, 1]` of 1 (active) / 0.
    pub fn mask_column(&self, mask: &[bool], batch: usize) -> Result<Tensor> {
        let one: Vec<f64> = self
            .order
            .iter()
            .map(|&c| if mask[c] { 1.0 } else { 0.0 })
            .collect();
        Tensor::new([batch * self.cells(), 1], one.repeat(batch))
    }

    /// Scatter row-ordered values of batch entry `b` back to row-major cells.
    pub fn to_cells(&self, rows: &[f64], b: usize) -> Vec<f64> {
        let n = self.cells();
        let mut out = vec![0.0; n];
        for (k, &c) in self.order.iter().enumerate() {
            out[c] = rows[b * n + k];
        }
        out
    }

    /// Gather row-major cell values into row order.
    pub fn to_rows<'a>(&'a self, cells: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.order.iter().map(move |&c| cells[c])
    }
}

/// Incoming lateral vectors: each cell receives the sum of its four
/// neighbors' outgoing vectors divided by 4. Off-grid and masked neighbors
/// contribute zero.
pub fn lateral_operator(layout: &Layout, mask: &[bool], batch: usize) -> Result<Arc<SparseRows>> {
    let (h, w) = (layout.height, layout.width);
    let rank = layout.rank();
    let mut triplets = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let to = rank[i * w + j];
            let neighbors = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for (a, b) in neighbors {
                if a < h && b < w && mask[a * w + b] {
                    triplets.push((to, rank[a * w + b], 0.25));
                }
            }
        }
    }
    let one = SparseRows::from_triplets(h * w, h * w, triplets)?;
    Ok(Arc::new(one.repeat_diagonal(batch)))
}

/// Plain-vector version of the lateral exchange on one grid, row-major.
pub fn aggregate_lateral(
    outgoing: &[Vec<f64>],
    mask: &[bool],
    height: usize,
    width: usize,
) -> Result<Vec<Vec<f64>>> {
    if outgoing.len() != height * width || mask.len() != height * width {
        return Err(Error::shape(
            "lateral vectors or mask do not match the grid",
        ));
    }
    let dim = outgoing.first().map_or(0, Vec::len);
    let layout = Layout::row_major(height, width);
    let op = lateral_operator(&layout, mask, 1)?;
    let flat: Vec<f64> = outgoing.iter().flatten().copied().collect();
    if flat.len() != dim * outgoing.len() {
        return Err(Error::shape("lateral vectors differ in length"));
    }
    Ok(op
        .apply(&flat, dim)
        .chunks(dim.max(1))
        .map(<[f64]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lateral_of_zeros_is_zero() {
        let out = aggregate_lateral(&vec![vec![0.0; 8]; 9], &[true; 9], 3, 3).unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_emitter_reaches_four_neighbors_with_quarter_weight() {
        let mut outgoing = vec![vec![0.0; 2]; 9];
        outgoing[4] = vec![4.0, -8.0];
        let out = aggregate_lateral(&outgoing, &[true; 9], 3, 3).unwrap();
        for c in [1, 3, 5, 7] {
            assert_eq!(out[c], vec![1.0, -2.0]);
        }
        for c in [0, 2, 4, 6, 8] {
            assert_eq!(out[c], vec![0.0, 0.0]);
        }
    }

    #[test]
    fn corner_with_two_neighbors_gets_half() {
        let v = vec![1.0, 3.0];
        let out = aggregate_lateral(&vec![v.clone(); 9], &[true; 9], 3, 3).unwrap();
        assert_eq!(out[0], vec![0.5, 1.5]);
        assert_eq!(out[4], v);
    }

    #[test]
    fn masked_neighbors_do_not_emit() {
        let mut mask = [true; 9];
        mask[1] = false;
        let out = aggregate_lateral(&vec![vec![1.0]; 9], &mask, 3, 3).unwrap();
        assert_eq!(out[0], vec![0.25]);
    }

    #[test]
    fn tn_zero_weights_and_relu_range() {
        let zero = Stpcnn::zeros(StpcnnConfig::default()).unwrap();
        let model = Stpcnn::new(StpcnnConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (m, expect_zero) in [(&zero, true), (&model, false)] {
            let mut tape = Tape::new();
            let p = m.params.bind(&mut tape, false);
            let code = tape.constant(Tensor::randn([5, 16], 1.0, &mut rng));
            let lat = tape.constant(Tensor::randn([5, 8], 1.0, &mut rng));
            let y = m.tn.forward(&mut tape, &p, code, lat).unwrap();
            let v = tape.value(y).data();
            assert!(v.iter().all(|&x| x >= 0.0));
            if expect_zero {
                assert!(v.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn fn_zero_params_zero_state_gives_zero() {
        let m = Stpcnn::zeros(StpcnnConfig::default()).unwrap();
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, false);
        let code = tape.constant(Tensor::full([3, 16], 0.3));
        let value = tape.constant(Tensor::full([3, 1], 0.7));
        let enc = tape.constant(Tensor::zeros([3, 8]));
        let state = LstmState::zeros(&mut tape, 3, 256);
        let (s, l, st) = m
            .fnet
            .forward(&mut tape, &p, code, value, enc, state)
            .unwrap();
        for v in [s, l, st.h] {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn coupling_projections() {
        let mut m = Stpcnn::zeros(StpcnnConfig::default()).unwrap();
        for ((w_he, w_ho), expect) in [((1.0, 0.0), 2.0), ((0.0, 1.0), -1.0), ((0.5, 0.5), 0.5)] {
            m.coupling.set_weights(&mut m.params, w_he, w_ho, 0.0);
            let mut tape = Tape::new();
            let p = m.params.bind(&mut tape, false);
            let he = tape.constant(Tensor::full([1, 1], 2.0));
            let ho = tape.constant(Tensor::full([1, 1], -1.0));
            let y = m.coupling.forward(&mut tape, &p, he, ho).unwrap();
            assert_eq!(tape.value(y).data(), &[expect]);
        }
        m.coupling.set_weights(&mut m.params, 0.5, 0.5, 0.0);
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, false);
        let v = tape.constant(Tensor::full([1, 1], 0.37));
        let y = m.coupling.forward(&mut tape, &p, v, v).unwrap();
        assert_eq!(tape.value(y).data(), &[0.37]);
    }

    #[test]
    fn layout_rejects_non_permutations() {
        assert!(Layout::permuted(2, 2, vec![0, 1, 1, 3]).is_err());
        assert!(Layout::permuted(2, 2, vec![0, 1, 2]).is_err());
        let l = Layout::permuted(2, 2, vec![3, 1, 0, 2]).unwrap();
        assert_eq!(l.rank(), vec![2, 1, 3, 0]);
        assert_eq!(
            l.to_cells(&[30.0, 10.0, 0.0, 20.0], 0),
            vec![0.0, 10.0, 20.0, 30.0]
        );
    }
}
