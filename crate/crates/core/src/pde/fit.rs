use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::coeffs::{PdeCoefficients, TERMS};
use super::dictionary::{dictionary_on_tape, eval_dictionary, Domain};
use super::mlp::CoordMlp;
use super::oracle::{svd_nullspace_oracle, NullSpace};
use crate::error::{Error, Result};
use crate::grid::GridSequence;
use crate::tensor::{AdamConfig, AdamState, Bound, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeFitConfig {
    pub lambda_d: f64,
    pub lambda_sparse: f64,
    /// Observations drawn per step for the regression term.
    pub samples: usize,
    /// Collocation points drawn per step for the dictionary term.
    pub collocation: usize,
    /// Finite-difference step in normalized coordinates. `None` uses one
    /// cell (or frame) spacing per axis and places collocation points on
    /// grid nodes.
    pub fd_step: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier on the first layer's initial weights. Values above 1 start
    /// the network with sharper features in the normalized box.
    pub first_layer_gain: f64,
    pub seed: u64,
    pub dx: f64,
    pub dy: f64,
    pub log_every: usize,
}

impl Default for PdeFitConfig {
    fn default() -> Self {
        Self {
            lambda_d: 1.0,
            lambda_sparse: 0.1,
            samples: 1024,
            collocation: 512,
            fd_step: None,
            epochs: 3000,
            lr: 1e-3,
            first_layer_gain: 1.0,
            seed: 0,
            dx: 1.0,
            dy: 1.0,
            log_every: 100,
        }
    }
}

impl PdeFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d >= 0.0 && self.lambda_sparse >= 0.0) {
            return Err(Error::config("loss weights must be >= 0"));
        }
        if self.samples == 0 || self.collocation == 0 || self.epochs == 0 {
            return Err(Error::config(
                "samples, collocation and epochs must be >= 1",
            ));
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::config(format!(
                    "fd_step must lie in (0, 1), got {h}"
                )));
            }
        }
        if !(self.lr > 0.0 && self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::config("lr, dx and dy must be positive"));
        }
        Ok(())
    }
}

/// Loss value and its three parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeLossParts {
    pub loss: f64,
    pub l_u: f64,
    pub l_d: f64,
    pub l_sparse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeEpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub parts: PdeLossParts,
}

/// Observations `(point, value)` and collocation points, all normalized.
pub struct PdeBatch<'a> {
    pub points: &'a [[f64; 3]],
    pub targets: &'a [f64],
    pub collocation: &'a [[f64; 3]],
}

/// `sqrt(L_u) * (1 + lambda_d L_d + lambda_sparse |c|_1)` recorded on `tape`.
///
/// `c` is a `[7, 1]` variable; `L_d` is the mean of `(D c)^2` over the
/// collocation rows.
#[allow(clippy::too_many_arguments)]
pub fn pde_loss(
    tape: &mut Tape,
    net: &CoordMlp,
    bound: &Bound,
    c: Var,
    batch: &PdeBatch<'_>,
    h: [f64; 3],
    lambda_d: f64,
    lambda_sparse: f64,
) -> Result<(Var, PdeLossParts)> {
    if batch.points.len() != batch.targets.len() || batch.points.is_empty() {
        return Err(Error::shape(format!(
            "{} points with {} targets",
            batch.points.len(),
            batch.targets.len()
        )));
    }
    let x = tape.constant(CoordMlp::points_tensor(batch.points));
    let pred = net.forward(tape, bound, x)?;
    let target = tape.constant(Tensor::column(batch.targets.to_vec()));
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    let l_u = tape.mean(sq)?;

    let d = dictionary_on_tape(tape, net, bound, batch.collocation, h)?;
    let r = tape.matmul(d, c)?;
    let r2 = tape.square(r)?;
    let l_d = tape.mean(r2)?;
    let ac = tape.abs(c)?;
    let l_sparse = tape.sum(ac)?;

    let wd = tape.scale(l_d, lambda_d)?;
    let ws = tape.scale(l_sparse, lambda_sparse)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let f = tape.add(one, wd)?;
    let f = tape.add(f, ws)?;
    let root = tape.sqrt(l_u)?;
    let loss = tape.mul(root, f)?;
    let val = |t: &Tape, v: Var| t.value(v).data()[0];
    let parts = PdeLossParts {
        loss: val(tape, loss),
        l_u: val(tape, l_u),
        l_d: val(tape, l_d),
        l_sparse: val(tape, l_sparse),
    };
    Ok((loss, parts))
}

/// Result of fitting: the network, its normalization box and the
/// coefficients both in physical units and as trained.
#[derive(Clone, Debug)]
pub struct PdeFit {
    pub net: CoordMlp,
    pub domain: Domain,
    pub h: [f64; 3],
    /// The network fits observations divided by this factor.
    pub value_scale: f64,
    pub coefficients: PdeCoefficients,
    pub normalized: PdeCoefficients,
    pub history: Vec<PdeEpochLog>,
}

/// Coefficients over normalized-coordinate terms mapped to physical units.
pub fn to_physical(normalized: &PdeCoefficients, domain: &Domain) -> Result<PdeCoefficients> {
    let f = domain.term_factors();
    Ok(normalized.rescaled(&f.map(|v| 1.0 / v))?.canonical())
}

fn normalize_in_place(t: &mut Tensor) {
    let n = t.l2_norm();
    if n > 0.0 {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
}

/// Sampler over the active grid nodes of a sequence.
struct NodeSampler<'a> {
    seq: &'a GridSequence,
    domain: Domain,
    dx: f64,
    dy: f64,
    active: Vec<usize>,
    value_scale: f64,
}

impl<'a> NodeSampler<'a> {
    fn point(&self, t: usize, i: usize, j: usize) -> [f64; 3] {
        self.domain.normalize([
            i as f64 * self.dx,
            j as f64 * self.dy,
            t as f64 * self.seq.dt(),
        ])
    }

    fn observations<R: Rng>(&self, n: usize, rng: &mut R) -> (Vec<[f64; 3]>, Vec<f64>) {
        let cells = self.active.len();
        let total = cells * self.seq.frames();
        let picks: Vec<usize> = if n >= total {
            (0..total).collect()
        } else {
            index::sample(rng, total, n).into_vec()
        };
        let w = self.seq.width();
        picks
            .into_iter()
            .map(|k| {
                let (t, c) = (k / cells, self.active[k % cells]);
                let (i, j) = (c / w, c % w);
                (self.point(t, i, j), self.seq.at(t, i, j) / self.value_scale)
            })
            .unzip()
    }

    /// Interior nodes one step away from every edge.
    fn grid_collocation<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
        let (f, h, w) = (self.seq.frames(), self.seq.height(), self.seq.width());
        (0..n)
            .map(|_| {
                self.point(
                    rng.random_range(1..f - 1),
                    rng.random_range(1..h - 1),
                    rng.random_range(1..w - 1),
                )
            })
            .collect()
    }
}

fn uniform_collocation<R: Rng>(n: usize, h: f64, rng: &mut R) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-1.0 + h..=1.0 - h)))
        .collect()
}

/// Jointly fit the coordinate network and the coefficients with Adam,
/// renormalizing the coefficients after every step.
pub fn train_pde(data: &GridSequence, cfg: &PdeFitConfig) -> Result<PdeFit> {
    cfg.validate()?;
    if data.frames() < 3 || data.height() < 3 || data.width() < 3 {
        return Err(Error::config(format!(
            "PDE fitting needs at least 3 frames and a 3x3 grid, got {}x{}x{}",
            data.frames(),
            data.height(),
            data.width()
        )));
    }
    let domain = Domain::of_sequence(data, cfg.dx, cfg.dy)?;
    let h = match cfg.fd_step {
        Some(h) => [h; 3],
        None => {
            let s = domain.scale();
            [s[0] * cfg.dx, s[1] * cfg.dy, s[2] * data.dt()]
        }
    };
    let active: Vec<usize> = (0..data.frame_len()).filter(|&c| data.mask()[c]).collect();
    let value_scale = rms_active(data, &active);
    let sampler = NodeSampler {
        seq: data,
        domain,
        dx: cfg.dx,
        dy: cfg.dy,
        active,
        value_scale,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CoordMlp::new(rng.random());
    net.scale_first_layer(cfg.first_layer_gain);
    let mut coef = ParamSet::new();
    let mut init = Tensor::new(
        [TERMS, 1],
        (0..TERMS).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    normalize_in_place(&mut init);
    let cid = coef.push("pde.c", init);

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt_net = AdamState::new(adam, &net.params);
    let mut opt_c = AdamState::new(adam, &coef);
    let mut history = Vec::new();
    let mut last_good = net.params.clone();

    for epoch in 0..cfg.epochs {
        let (points, targets) = sampler.observations(cfg.samples, &mut rng);
        let collocation = match cfg.fd_step {
            None => sampler.grid_collocation(cfg.collocation, &mut rng),
            Some(step) => uniform_collocation(cfg.collocation, step, &mut rng),
        };
        let batch = PdeBatch {
            points: &points,
            targets: &targets,
            collocation: &collocation,
        };

        let step = (|| -> Result<PdeLossParts> {
            let mut tape = Tape::new();
            let bn = net.params.bind(&mut tape, true);
            let bc = coef.bind(&mut tape, true);
            let (loss, parts) = pde_loss(
                &mut tape,
                &net,
                &bn,
                bc[cid],
                &batch,
                h,
                cfg.lambda_d,
                cfg.lambda_sparse,
            )?;
            let mut grads = tape.backward(loss)?;
            let gn = net.params.collect_grads(&bn, &mut grads);
            let gc = coef.collect_grads(&bc, &mut grads);
            opt_net.step(&mut net.params, &gn)?;
            opt_c.step(&mut coef, &gc)?;
            Ok(parts)
        })();
        let parts = match step {
            Ok(p) if p.loss.is_finite() && net.params.is_finite() && coef.is_finite() => p,
            Ok(_) | Err(Error::Numerics(_)) => {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite loss while fitting the PDE network".into(),
                    last_finite: Some(Box::new(last_good)),
                });
            }
            Err(e) => return Err(e),
        };
        normalize_in_place(coef.get_mut(cid));
        last_good.clone_from(&net.params);
        if epoch % cfg.log_every.max(1) == 0 || epoch + 1 == cfg.epochs {
            log::info!(
                "pde epoch {epoch}: loss {:.4e} L_u {:.4e} L_d {:.4e} L_sparse {:.4}",
                parts.loss,
                parts.l_u,
                parts.l_d,
                parts.l_sparse
            );
            history.push(PdeEpochLog { epoch, parts });
        }
    }

    let raw: [f64; TERMS] = coef.get(cid).data().try_into().expect("7 coefficients");
    let normalized = PdeCoefficients::new(raw)?;
    let coefficients = to_physical(&normalized, &domain)?;
    Ok(PdeFit {
        net,
        domain,
        h,
        value_scale,
        coefficients,
        normalized,
        history,
    })
}

/// Root mean square over active cells, or 1 for an all-zero sequence.
fn rms_active(data: &GridSequence, active: &[usize]) -> f64 {
    let mut acc = 0.0;
    for t in 0..data.frames() {
        let f = data.frame(t);
        acc += active.iter().map(|&c| f[c] * f[c]).sum::<f64>();
    }
    let rms = (acc / (active.len() * data.frames()) as f64).sqrt();
    if rms > 0.0 {
        rms
    } else {
        1.0
    }
}

impl PdeFit {
    /// Fitted value at physical `(x, y, t)`.
    pub fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        let [a, b, c] = self.domain.normalize([x, y, t]);
        self.net.eval(a, b, c) * self.value_scale
    }

    /// Null-space estimate from the fitted network's dictionary at interior
    /// grid nodes of `data` (every `stride`-th frame), in physical units.
    pub fn nullspace_estimate(&self, data: &GridSequence, stride: usize) -> Result<NullSpace> {
        let mut points = Vec::new();
        let span = |a: usize, n: usize| (self.domain.hi[a] - self.domain.lo[a]) / (n - 1) as f64;
        let (dx, dy) = (span(0, data.height()), span(1, data.width()));
        for t in (1..data.frames() - 1).step_by(stride.max(1)) {
            for i in 1..data.height() - 1 {
                for j in 1..data.width() - 1 {
                    if data.mask()[i * data.width() + j] {
                        points.push(self.domain.normalize([
                            self.domain.lo[0] + i as f64 * dx,
                            self.domain.lo[1] + j as f64 * dy,
                            self.domain.lo[2] + t as f64 * data.dt(),
                        ]));
                    }
                }
            }
        }
        let rows = eval_dictionary(&self.net, &points, self.h)?;
        let ns = svd_nullspace_oracle(&rows)?;
        Ok(NullSpace {
            coefficients: to_physical(&ns.coefficients, &self.domain)?,
            ..ns
        })
    }
}
