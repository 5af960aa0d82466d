use super::model::{lateral_operator, Layout, LstmState, Stpcnn};
use super::physics::Physics;
use crate::error::{Error, Result};
use crate::grid::{GridField, GridSequence};
use crate::tensor::{Bound, Tape, Tensor, Var};

/// Output of one unrolled pass over a batch of sequences.
pub struct Unrolled {
    /// Coupled prediction of frame `t + 1` for every step `t`, `[rows, 1]`.
    pub predictions: Vec<Var>,
    /// First step at which the physics backend failed; later steps use the
    /// heterogeneous prediction alone.
    pub physics_fallback: Option<usize>,
}

/// Run the forecaster for `steps` steps on `batch`, recording on `tape`.
///
/// At step `t` the model consumes frame `t` (ground truth when
/// `teacher(t)` holds, its own previous prediction otherwise; step 0 always
/// reads ground truth) and predicts frame `t + 1`. From step 1 on, the
/// physics backend advances the pair of consumed values `(t - 1, t)`.
pub fn unroll(
    tape: &mut Tape,
    model: &Stpcnn,
    p: &Bound,
    batch: &[&GridSequence],
    steps: usize,
    teacher: &mut dyn FnMut(usize) -> bool,
    physics: &Physics,
    layout: &Layout,
) -> Result<Unrolled> {
    let first = batch
        .first()
        .ok_or_else(|| Error::contract("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    if (layout.height, layout.width) != (h, w) {
        return Err(Error::shape("layout does not match the sequences"));
    }
    for s in batch {
        if (s.height(), s.width()) != (h, w) || s.mask() != first.mask() || s.dt() != first.dt() {
            return Err(Error::shape("batch sequences must share grid, mask and dt"));
        }
    }
    let b = batch.len();
    let n = layout.cells();
    let rows = b * n;
    let cfg = model.config;
    let mask = first.mask();
    let dt = first.dt();

    let codes = tape.constant(layout.codes(cfg.positional_dim, b)?);
    let mask_col = tape.constant(layout.mask_column(mask, b)?);
    let lateral_op = lateral_operator(layout, mask, b)?;
    let zero_lateral = tape.constant(Tensor::zeros([rows, cfg.lateral_dim]));
    let truth = |t: usize| -> Result<Tensor> {
        let mut col = Vec::with_capacity(rows);
        for s in batch {
            if t >= s.frames() {
                return Err(Error::contract(format!(
                    "ground truth frame {t} requested from {} frames",
                    s.frames()
                )));
            }
            col.extend(layout.to_rows(s.frame(t)));
        }
        Tensor::new([rows, 1], col)
    };

    let mut state = LstmState::zeros(tape, rows, cfg.hidden);
    let mut emitted: Option<Var> = None;
    let mut fed_prev: Option<Var> = None;
    let mut predictions: Vec<Var> = Vec::with_capacity(steps);
    let mut fallback = None;

    for t in 0..steps {
        let fed = if t == 0 || teacher(t) {
            let col = truth(t)?;
            tape.constant(col)
        } else {
            *predictions.last().expect("t >= 1")
        };
        let incoming = match emitted {
            Some(l) if !cfg.zero_lateral => tape.sparse_rows(&lateral_op, l)?,
            _ => zero_lateral,
        };
        let encoded = model.tn.forward(tape, p, codes, incoming)?;
        let (s_he, l_hat, next_state) = model.fnet.forward(tape, p, codes, fed, encoded, state)?;
        state = next_state;
        emitted = Some(l_hat);

        let homogeneous = match fed_prev {
            Some(prev) if !physics.is_none() && fallback.is_none() => {
                match physics_rows(
                    physics,
                    tape.value(prev),
                    tape.value(fed),
                    layout,
                    b,
                    mask,
                    dt,
                ) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        log::warn!(
                            "physics backend failed at step {t}: {e}; continuing without it"
                        );
                        fallback = Some(t);
                        None
                    }
                }
            }
            _ => None,
        };
        let s = match homogeneous {
            Some(v) => {
                let ho = tape.constant(v);
                model.coupling.forward(tape, p, s_he, ho)?
            }
            None => s_he,
        };
        predictions.push(tape.mul(s, mask_col)?);
        fed_prev = Some(fed);
    }
    Ok(Unrolled {
        predictions,
        physics_fallback: fallback,
    })
}

fn physics_rows(
    physics: &Physics,
    prev: &Tensor,
    curr: &Tensor,
    layout: &Layout,
    batch: usize,
    mask: &[bool],
    dt: f64,
) -> Result<Tensor> {
    let (h, w) = (layout.height, layout.width);
    let mut out = Vec::with_capacity(prev.numel());
    for b in 0..batch {
        let pf = GridField::from_vec(h, w, layout.to_cells(prev.data(), b))?;
        let cf = GridField::from_vec(h, w, layout.to_cells(curr.data(), b))?;
        let next = physics.step(&pf, &cf, mask, dt)?;
        out.extend(layout.to_rows(next.data()));
    }
    Tensor::new([out.len(), 1], out)
}

/// Predictions of one rollout, frame `k` being the forecast of time `k + 1`.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub predictions: GridSequence,
    pub physics_fallback: Option<usize>,
}

/// Teacher-forced for frames `0..tf_steps`, then closed loop for
/// `horizon` further steps.
pub fn rollout(
    model: &Stpcnn,
    seq: &GridSequence,
    tf_steps: usize,
    horizon: usize,
    physics: &Physics,
) -> Result<Rollout> {
    rollout_with_layout(
        model,
        seq,
        tf_steps,
        horizon,
        physics,
        &Layout::row_major(seq.height(), seq.width()),
    )
}

pub fn rollout_with_layout(
    model: &Stpcnn,
    seq: &GridSequence,
    tf_steps: usize,
    horizon: usize,
    physics: &Physics,
    layout: &Layout,
) -> Result<Rollout> {
    if tf_steps == 0 || tf_steps > seq.frames() {
        return Err(Error::contract(format!(
            "tf_steps {tf_steps} outside 1..={}",
            seq.frames()
        )));
    }
    if matches!(
        physics,
        Physics::Pde { .. } | Physics::TruthWave { .. } | Physics::Ode { .. }
    ) && tf_steps < 2
    {
        return Err(Error::contract(
            "physics coupling needs at least 2 teacher-forced frames",
        ));
    }
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let steps = tf_steps + horizon;
    let out = unroll(
        &mut tape,
        model,
        &p,
        &[seq],
        steps,
        &mut |t| t < tf_steps,
        physics,
        layout,
    )?;
    let mut data = Vec::with_capacity(steps * seq.frame_len());
    for v in &out.predictions {
        data.extend(layout.to_cells(tape.value(*v).data(), 0));
    }
    let mut predictions = GridSequence::with_mask(
        steps,
        seq.height(),
        seq.width(),
        data,
        seq.mask().to_vec(),
        seq.dt(),
    )?;
    predictions
        .meta
        .insert("tf_steps".into(), tf_steps.to_string());
    predictions.meta.insert("time_offset".into(), "1".into());
    if let Some(t) = out.physics_fallback {
        predictions
            .meta
            .insert("physics_fallback_step".into(), t.to_string());
    }
    Ok(Rollout {
        predictions,
        physics_fallback: out.physics_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stpcnn::StpcnnConfig;
    use crate::wave::{simulate, WaveConfig};

    fn small() -> StpcnnConfig {
        StpcnnConfig {
            hidden: 16,
            fusion_dim: 8,
            tn_hidden: 8,
            ..StpcnnConfig::default()
        }
    }

    fn waves(steps: usize) -> GridSequence {
        simulate(&WaveConfig {
            height: 6,
            width: 6,
            center: (2.0, 3.0),
            steps,
            ..WaveConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_horizon_gives_teacher_forced_predictions_only() {
        let model = Stpcnn::new(small(), 1).unwrap();
        let r = rollout(&model, &waves(12), 5, 0, &Physics::None).unwrap();
        assert_eq!(r.predictions.frames(), 5);
    }

    #[test]
    fn truth_wave_with_projection_coupling_reproduces_simulator() {
        let mut model = Stpcnn::new(small(), 2).unwrap();
        model.coupling.set_weights(&mut model.params, 0.0, 1.0, 0.0);
        let seq = waves(30);
        let r = rollout(
            &model,
            &seq,
            2,
            25,
            &Physics::TruthWave {
                speed: 3.0,
                dx: 1.0,
                dy: 1.0,
            },
        )
        .unwrap();
        // Frame k predicts time k + 1; physics starts at step 1.
        for k in 1..27 {
            let (pred, truth) = (r.predictions.frame(k), seq.frame(k + 1));
            for (a, b) in pred.iter().zip(truth) {
                assert!((a - b).abs() < 1e-12, "frame {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn physics_needs_two_frames() {
        let model = Stpcnn::new(small(), 2).unwrap();
        let phys = Physics::TruthWave {
            speed: 3.0,
            dx: 1.0,
            dy: 1.0,
        };
        assert!(matches!(
            rollout(&model, &waves(10), 1, 3, &phys),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn degenerate_physics_falls_back_and_is_flagged() {
        let model = Stpcnn::new(small(), 4).unwrap();
        let c = crate::pde::PdeCoefficients::new([0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let phys = Physics::Pde {
            coefficients: c,
            dx: 1.0,
            dy: 1.0,
        };
        let seq = waves(10);
        let r = rollout(&model, &seq, 3, 4, &phys).unwrap();
        assert_eq!(r.physics_fallback, Some(1));
        let plain = rollout(&model, &seq, 3, 4, &Physics::None).unwrap();
        assert_eq!(r.predictions.data(), plain.predictions.data());
        assert_eq!(
            r.predictions
                .meta
                .get("physics_fallback_step")
                .map(String::as_str),
            Some("1")
        );
    }

    #[test]
    fn masked_cells_stay_zero() {
        let seq = waves(8);
        let mut mask = vec![true; 36];
        mask[7] = false;
        mask[20] = false;
        let seq =
            GridSequence::with_mask(8, 6, 6, seq.data().to_vec(), mask.clone(), seq.dt()).unwrap();
        let model = Stpcnn::new(small(), 5).unwrap();
        let r = rollout(
            &model,
            &seq,
            3,
            4,
            &Physics::TruthWave {
                speed: 3.0,
                dx: 1.0,
                dy: 1.0,
            },
        )
        .unwrap();
        for t in 0..r.predictions.frames() {
            assert_eq!(r.predictions.frame(t)[7], 0.0);
            assert_eq!(r.predictions.frame(t)[20], 0.0);
        }
    }
}
