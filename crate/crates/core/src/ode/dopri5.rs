//! Dormand–Prince 5(4) with PI step-size control.
//!
//! The adaptive driver works on plain vectors and records the accepted step
//! sizes. Training replays that frozen step sequence on a [`Tape`] so
//! gradients flow through exactly the computation that produced the output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (equal to the last row of `A`, first-same-as-last).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dopri5Config {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// First trial step; `None` picks one from the local scale of `f`.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
}

impl Default for Dopri5Config {
    fn default() -> Self {
        Self {
            abs_tol: 1e-3,
            rel_tol: 1e-3,
            initial_step: None,
            max_steps: 10_000,
            safety: 0.9,
        }
    }
}

impl Dopri5Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be >= 1"));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::config("safety factor must lie in (0, 1]"));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::config("initial_step must be positive"));
            }
        }
        Ok(())
    }
}

/// Outcome of one step attempt, kept for inspection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    /// Scaled error norm; accepted iff `<= 1`.
    pub error: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub z: Vec<f64>,
    /// Accepted step sizes in order; replaying them reproduces `z`.
    pub steps: Vec<f64>,
    pub attempts: Vec<StepRecord>,
    pub evaluations: usize,
}

fn axpy_stages(z: &[f64], h: f64, coeffs: &[f64], k: &[Vec<f64>]) -> Vec<f64> {
    let mut out = z.to_vec();
    for (a, kj) in coeffs.iter().zip(k) {
        if *a != 0.0 {
            for (o, v) in out.iter_mut().zip(kj) {
                *o += h * a * v;
            }
        }
    }
    out
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Solver(
            "vector field returned a non-finite value".into(),
        ))
    }
}

/// Stages of one step from `(t, z)` with `k1 = f(t, z)` supplied.
fn stages<F>(f: &mut F, t: f64, z: &[f64], k1: Vec<f64>, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut k = Vec::with_capacity(7);
    k.push(k1);
    for s in 1..7 {
        let zs = axpy_stages(z, h, A[s], &k);
        let ks = f(t + C[s] * h, &zs)?;
        check_finite(&ks)?;
        k.push(ks);
    }
    Ok(k)
}

fn scaled_error(z: &[f64], z_new: &[f64], k: &[Vec<f64>], h: f64, cfg: &Dopri5Config) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 0..z.len() {
        let err: f64 = h * (0..7).map(|s| E[s] * k[s][n]).sum::<f64>();
        let tol = cfg.abs_tol + cfg.rel_tol * z[n].abs().max(z_new[n].abs());
        worst = worst.max(err.abs() / tol);
    }
    worst
}

fn norm_rms(v: &[f64], scale: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter()
        .zip(scale)
        .map(|(a, s)| (a / s).powi(2))
        .sum::<f64>()
        / v.len() as f64)
        .sqrt()
}

/// Starting step from the local scales of `z` and `f` (Hairer, Nørsett and
/// Wanner's heuristic).
fn initial_step<F>(
    f: &mut F,
    t0: f64,
    z0: &[f64],
    f0: &[f64],
    span: f64,
    cfg: &Dopri5Config,
) -> Result<f64>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let scale: Vec<f64> = z0
        .iter()
        .map(|v| cfg.abs_tol + cfg.rel_tol * v.abs())
        .collect();
    let (d0, d1) = (norm_rms(z0, &scale), norm_rms(f0, &scale));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let z1: Vec<f64> = z0.iter().zip(f0).map(|(z, v)| z + h0 * v).collect();
    let f1 = f(t0 + h0, &z1)?;
    check_finite(&f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm_rms(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Adaptive integration of `dz/dt = f(t, z)` from `t0` to `t1`.
pub fn dopri5<F>(mut f: F, z0: &[f64], t0: f64, t1: f64, cfg: &Dopri5Config) -> Result<Solution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(Error::contract(format!(
            "integration interval [{t0}, {t1}] is empty"
        )));
    }
    const BETA: f64 = 0.04;
    const ALPHA: f64 = 0.2 - 0.75 * BETA;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;

    let span = t1 - t0;
    let mut z = z0.to_vec();
    let mut t = t0;
    let mut k1 = f(t, &z)?;
    check_finite(&k1)?;
    let mut evaluations = 1;
    let mut h = match cfg.initial_step {
        Some(h) => h.min(span),
        None => {
            evaluations += 1;
            initial_step(&mut f, t0, &z, &k1, span, cfg)?
        }
    };
    let mut prev_err: f64 = 1e-4;
    let mut steps = Vec::new();
    let mut attempts = Vec::new();
    let mut last_rejected = false;

    while t1 - t > 1e-12 * span.max(1.0) {
        if attempts.len() >= cfg.max_steps {
            return Err(Error::Solver(format!(
                "no convergence within {} step attempts",
                cfg.max_steps
            )));
        }
        let h_try = h.min(t1 - t);
        let k = stages(&mut f, t, &z, k1.clone(), h_try)?;
        evaluations += 6;
        let z_new = axpy_stages(&z, h_try, &B5, &k);
        let err = scaled_error(&z, &z_new, &k, h_try, cfg);
        let accepted = err <= 1.0;
        attempts.push(StepRecord {
            t,
            h: h_try,
            error: err,
            accepted,
        });
        if accepted {
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (cfg.safety * err.powf(-ALPHA) * prev_err.powf(BETA)).clamp(FAC_MIN, FAC_MAX)
            };
            let fac = if last_rejected { fac.min(1.0) } else { fac };
            prev_err = err.max(1e-4);
            t = if t1 - (t + h_try) <= 1e-12 * span.max(1.0) {
                t1
            } else {
                t + h_try
            };
            steps.push(h_try);
            k1 = k.into_iter().nth(6).expect("seven stages");
            z = z_new;
            h = h_try * fac;
            last_rejected = false;
        } else {
            h = h_try * (cfg.safety * err.powf(-0.2)).max(FAC_MIN);
            last_rejected = true;
        }
        if !(h > 0.0 && h.is_finite()) || h < 1e-14 * span {
            return Err(Error::Solver(format!("step size underflow at t = {t}")));
        }
    }
    Ok(Solution {
        z,
        steps,
        attempts,
        evaluations,
    })
}

/// Integrate with a prescribed sequence of step sizes (no error control).
pub fn dopri5_steps<F>(mut f: F, z0: &[f64], t0: f64, steps: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut z = z0.to_vec();
    let mut t = t0;
    for &h in steps {
        let k1 = f(t, &z)?;
        check_finite(&k1)?;
        let k = stages(&mut f, t, &z, k1, h)?;
        z = axpy_stages(&z, h, &B5, &k);
        t += h;
    }
    Ok(z)
}

/// `n` equal steps over `[t0, t1]`.
pub fn dopri5_fixed<F>(f: F, z0: &[f64], t0: f64, t1: f64, n: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if n == 0 || !(t1 > t0) {
        return Err(Error::contract(
            "fixed-step integration needs n >= 1 and t1 > t0",
        ));
    }
    let h = (t1 - t0) / n as f64;
    dopri5_steps(f, z0, t0, &vec![h; n])
}

/// Replay of an autonomous field `f` over frozen `steps`, recorded on `tape`.
pub fn dopri5_replay<F>(tape: &mut Tape, mut f: F, z0: Var, steps: &[f64]) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut z = z0;
    for &h in steps {
        let mut k: Vec<Var> = Vec::with_capacity(7);
        k.push(f(tape, z)?);
        for s in 1..6 {
            let zs = combine(tape, z, h, A[s], &k)?;
            k.push(f(tape, zs)?);
        }
        z = combine(tape, z, h, &B5[..6], &k)?;
    }
    Ok(z)
}

fn combine(tape: &mut Tape, z: Var, h: f64, coeffs: &[f64], k: &[Var]) -> Result<Var> {
    let mut acc = z;
    for (a, kj) in coeffs.iter().zip(k) {
        if *a != 0.0 {
            let term = tape.scale(*kj, h * a)?;
            acc = tape.add(acc, term)?;
        }
    }
    Ok(acc)
}
