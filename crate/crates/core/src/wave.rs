//! Reflected-wave data: explicit central-difference integration of
//! `u_tt = c^2 (u_xx + u_yy)` with zero values outside the grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSequence};

/// How frame 1 is produced from the resting frame 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartRule {
    /// `u1 = u0 + (c dt)^2 / 2 * lap(u0)`: zero initial velocity, second order.
    #[default]
    Taylor,
    /// `u1 = step(u0, u0)`: the same closure expressed with the leapfrog
    /// update, which is only first-order accurate in time.
    Repeat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveConfig {
    pub height: usize,
    pub width: usize,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub speed: f64,
    pub amplitude: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    /// Gaussian center `(s_x, s_y)` in cell coordinates (`x` along rows).
    pub center: (f64, f64),
    /// Number of frames produced.
    pub steps: usize,
    /// Std of i.i.d. Gaussian noise added after integration; 0 disables.
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub start: StartRule,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            dt: 0.1,
            dx: 1.0,
            dy: 1.0,
            speed: 3.0,
            amplitude: 0.34,
            sigma2_x: 0.5,
            sigma2_y: 0.5,
            center: (8.0, 8.0),
            steps: 200,
            noise_std: 0.0,
            seed: 0,
            start: StartRule::Taylor,
        }
    }
}

/// CFL number above which the scheme is refused.
pub const CFL_LIMIT: f64 = 1.0;
/// CFL number above which a warning is logged (2-D stability bound).
pub const CFL_WARN: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl WaveConfig {
    pub fn cfl(&self) -> f64 {
        self.speed * self.dt / self.dx.min(self.dy)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("dx", self.dx),
            ("dy", self.dy),
            ("speed", self.speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.height == 0 || self.width == 0 || self.steps == 0 {
            return Err(Error::config(
                "grid extents and step count must be positive",
            ));
        }
        if !(self.sigma2_x > 0.0 && self.sigma2_y > 0.0) {
            return Err(Error::config("Gaussian variances must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be >= 0"));
        }
        let cfl = self.cfl();
        if cfl > CFL_LIMIT {
            return Err(Error::Stability(format!(
                "CFL number {cfl:.3} exceeds {CFL_LIMIT}"
            )));
        }
        if cfl > CFL_WARN {
            log::warn!("CFL number {cfl:.3} is above the 2-D stability bound {CFL_WARN:.3}");
        }
        Ok(())
    }
}

/// Gaussian bump of amplitude `a` centered at `cfg.center`.
pub fn init_gaussian(cfg: &WaveConfig) -> Result<GridField> {
    let (sx, sy) = cfg.center;
    let inside = |v: f64, n: usize| v >= 0.0 && v <= (n - 1) as f64;
    if cfg.height == 0 || cfg.width == 0 || !inside(sx, cfg.height) || !inside(sy, cfg.width) {
        return Err(Error::config(format!(
            "center ({sx}, {sy}) outside {}x{} grid",
            cfg.height, cfg.width
        )));
    }
    Ok(GridField::from_fn(cfg.height, cfg.width, |i, j| {
        let (x, y) = (i as f64 - sx, j as f64 - sy);
        cfg.amplitude * (-(x * x / (2.0 * cfg.sigma2_x) + y * y / (2.0 * cfg.sigma2_y))).exp()
    }))
}

/// Second central differences along both axes, zero ghost cells.
pub fn second_differences(u: &GridField, dx: f64, dy: f64) -> (GridField, GridField) {
    let (h, w) = u.dims();
    let (ih, iw) = (h as isize, w as isize);
    let mut uxx = GridField::zeros(h, w);
    let mut uyy = GridField::zeros(h, w);
    for i in 0..ih {
        for j in 0..iw {
            let c = u.get(i, j);
            let xx = (u.get(i + 1, j) - 2.0 * c + u.get(i - 1, j)) / (dx * dx);
            let yy = (u.get(i, j + 1) - 2.0 * c + u.get(i, j - 1)) / (dy * dy);
            uxx.set(i as usize, j as usize, xx);
            uyy.set(i as usize, j as usize, yy);
        }
    }
    (uxx, uyy)
}

/// One leapfrog update: `2 u_curr - u_prev + (c dt)^2 (u_xx + u_yy)`.
pub fn step(u_prev: &GridField, u_curr: &GridField, cfg: &WaveConfig) -> Result<GridField> {
    u_prev.check_same_dims(u_curr)?;
    if u_curr.dims() != (cfg.height, cfg.width) {
        return Err(Error::shape(format!(
            "field {:?} vs config {}x{}",
            u_curr.dims(),
            cfg.height,
            cfg.width
        )));
    }
    let (uxx, uyy) = second_differences(u_curr, cfg.dx, cfg.dy);
    let k = (cfg.speed * cfg.dt).powi(2);
    let mut next = GridField::zeros(cfg.height, cfg.width);
    for (n, (((p, c), xx), yy)) in next.data_mut().iter_mut().zip(
        u_prev
            .data()
            .iter()
            .zip(u_curr.data())
            .zip(uxx.data())
            .zip(uyy.data()),
    ) {
        *n = 2.0 * c - p + k * (xx + yy);
    }
    Ok(next)
}

/// Frame 1 from frame 0 under zero initial velocity.
pub fn start_step(u0: &GridField, cfg: &WaveConfig) -> Result<GridField> {
    match cfg.start {
        StartRule::Repeat => step(u0, u0, cfg),
        StartRule::Taylor => {
            let (uxx, uyy) = second_differences(u0, cfg.dx, cfg.dy);
            let k = 0.5 * (cfg.speed * cfg.dt).powi(2);
            let mut out = u0.clone();
            for ((o, xx), yy) in out.data_mut().iter_mut().zip(uxx.data()).zip(uyy.data()) {
                *o += k * (xx + yy);
            }
            Ok(out)
        }
    }
}

/// Integrate `cfg.steps` frames from the Gaussian initial condition.
pub fn simulate_fields(cfg: &WaveConfig) -> Result<Vec<GridField>> {
    cfg.validate()?;
    let mut frames = Vec::with_capacity(cfg.steps);
    frames.push(init_gaussian(cfg)?);
    if cfg.steps > 1 {
        frames.push(start_step(&frames[0], cfg)?);
    }
    while frames.len() < cfg.steps {
        let n = frames.len();
        let next = step(&frames[n - 2], &frames[n - 1], cfg)?;
        frames.push(next);
    }
    Ok(frames)
}

/// Simulated sequence, with optional additive noise.
pub fn simulate(cfg: &WaveConfig) -> Result<GridSequence> {
    let fields = simulate_fields(cfg)?;
    let mut seq = GridSequence::from_fields(&fields, cfg.dt)?;
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config(e.to_string()))?;
        for v in seq.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    seq.meta.insert("source".into(), "wave-sim".into());
    seq.meta.insert("speed".into(), cfg.speed.to_string());
    seq.meta.insert("dx".into(), cfg.dx.to_string());
    seq.meta.insert("dy".into(), cfg.dy.to_string());
    seq.meta.insert(
        "center".into(),
        format!("{},{}", cfg.center.0, cfg.center.1),
    );
    Ok(seq)
}

/// `count` sequences whose centers are drawn uniformly over interior cells.
/// Sequence `k` uses stream `k` of a generator seeded with `seed`.
pub fn simulate_corpus(base: &WaveConfig, count: usize, seed: u64) -> Result<Vec<GridSequence>> {
    if base.height < 3 || base.width < 3 {
        return Err(Error::config(
            "corpus grids need interior cells (at least 3x3)",
        ));
    }
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let cfg = WaveConfig {
                center: (
                    rng.random_range(1..base.height - 1) as f64,
                    rng.random_range(1..base.width - 1) as f64,
                ),
                seed: rng.random(),
                ..base.clone()
            };
            let mut s = simulate(&cfg)?;
            s.meta.insert("sequence".into(), k.to_string());
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_equals_amplitude() {
        let f = init_gaussian(&WaveConfig::default()).unwrap();
        assert_eq!(f.at(8, 8), 0.34);
        assert!(f.max_abs() <= 0.34);
    }

    #[test]
    fn zero_amplitude_is_zero_everywhere() {
        let cfg = WaveConfig {
            amplitude: 0.0,
            steps: 50,
            ..Default::default()
        };
        assert!(simulate(&cfg).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_about_center() {
        let f = init_gaussian(&WaveConfig::default()).unwrap();
        for k in 1..8 {
            assert_eq!(f.at(8 + k, 8), f.at(8 - k, 8));
            assert_eq!(f.at(8, 8 + k), f.at(8, 8 - k));
        }
    }

    #[test]
    fn center_outside_rejected() {
        let cfg = WaveConfig {
            center: (16.5, 3.0),
            ..Default::default()
        };
        assert!(matches!(init_gaussian(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn stencil_hand_case() {
        let cfg = WaveConfig {
            height: 5,
            width: 5,
            ..Default::default()
        };
        let prev = GridField::zeros(5, 5);
        let mut curr = GridField::zeros(5, 5);
        curr.set(2, 2, 1.0);
        let next = step(&prev, &curr, &cfg).unwrap();
        assert!((next.at(2, 2) - 1.64).abs() < 1e-12, "{}", next.at(2, 2));
        assert!((next.at(1, 2) - 0.09).abs() < 1e-12);
        let zero = step(&prev, &prev, &cfg).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_difference_exact_on_quadratic() {
        for h in [0.1, 0.5, 1.0, 2.0] {
            // Along x only, evaluated away from the zero ghost boundary.
            let f = GridField::from_fn(7, 3, |i, _| (i as f64 * h).powi(2));
            let (xx, _) = second_differences(&f, h, 1.0);
            for i in 1..6 {
                assert!(
                    (xx.at(i, 1) - 2.0).abs() < 1e-9,
                    "h={h} i={i} {}",
                    xx.at(i, 1)
                );
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let cfg = WaveConfig::default();
        let a = GridField::zeros(16, 16);
        let b = GridField::zeros(8, 8);
        assert!(matches!(step(&a, &b, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn unstable_cfl_refused() {
        let cfg = WaveConfig {
            dt: 0.5,
            ..Default::default()
        };
        assert!(matches!(simulate(&cfg), Err(Error::Stability(_))));
    }

    #[test]
    fn long_run_stays_bounded() {
        let cfg = WaveConfig {
            steps: 500,
            ..Default::default()
        };
        let s = simulate(&cfg).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert!(s.max_abs() <= 10.0 * cfg.amplitude);
    }

    #[test]
    fn diagonal_symmetry_preserved() {
        let cfg = WaveConfig {
            height: 17,
            width: 17,
            center: (8.0, 8.0),
            steps: 120,
            ..Default::default()
        };
        let s = simulate(&cfg).unwrap();
        for t in 0..s.frames() {
            for i in 0..17 {
                for j in 0..17 {
                    assert_eq!(s.at(t, i, j), s.at(t, j, i), "t={t} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = WaveConfig {
            steps: 30,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let noisy = WaveConfig {
            noise_std: 0.01,
            ..cfg
        };
        assert_eq!(simulate(&noisy).unwrap(), simulate(&noisy).unwrap());
    }

    #[test]
    fn corpus_centers_are_interior() {
        let base = WaveConfig {
            height: 8,
            width: 8,
            steps: 5,
            ..Default::default()
        };
        for s in simulate_corpus(&base, 20, 7).unwrap() {
            let c: Vec<f64> = s.meta["center"]
                .split(',')
                .map(|v| v.parse().unwrap())
                .collect();
            assert!((1.0..=6.0).contains(&c[0]) && (1.0..=6.0).contains(&c[1]));
        }
    }

    /// Error of the final frame against a run with `dt / 8`, for `dt` and `dt / 2`.
    fn final_errors(start: StartRule) -> (f64, f64) {
        let base = WaveConfig {
            steps: 201,
            start,
            ..Default::default()
        };
        let last = |k: usize| {
            let cfg = WaveConfig {
                dt: base.dt / k as f64,
                steps: (base.steps - 1) * k + 1,
                ..base.clone()
            };
            simulate_fields(&cfg).unwrap().pop().unwrap()
        };
        let reference = last(8);
        let err = |f: GridField| {
            f.data()
                .iter()
                .zip(reference.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        (err(last(1)), err(last(2)))
    }

    #[test]
    fn taylor_start_is_second_order_in_time() {
        let (e1, e2) = final_errors(StartRule::Taylor);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn repeated_start_loses_second_order() {
        let (e1, e2) = final_errors(StartRule::Repeat);
        let ratio = e1 / e2;
        assert!(ratio < 3.5, "ratio {ratio}");
    }
}
