use proptest::prelude::*;

use physicoupled::cli::gray_level;
use physicoupled::grid::{
    make_splits, positional_code, read_sequence, write_sequence, Butterworth, DataType,
    GridSequence, SplitSpec,
};
use physicoupled::ode::{dopri5, Dopri5Config};
use physicoupled::pde::pde_error;
use physicoupled::stpcnn::{
    aggregate_lateral, rollout, rollout_with_layout, Layout, Physics, Stpcnn, StpcnnConfig,
};
use physicoupled::wave::{simulate, WaveConfig};

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 7)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pde_error_is_bounded_symmetric_and_scale_free(a in coeffs(), b in coeffs(), k in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let e = pde_error(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((e - pde_error(&b, &a).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = b.iter().map(|v| v * k).collect();
        prop_assert!((e - pde_error(&a, &scaled).unwrap()).abs() < 1e-7);
        prop_assert!(pde_error(&a, &a).unwrap() < 1e-7);
    }

    #[test]
    fn lateral_exchange_matches_neighbor_sum(
        h in 1usize..6,
        w in 1usize..6,
        seed in any::<u64>(),
    ) {
        let n = h * w;
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mask: Vec<bool> = (0..n).map(|_| next() > 0.3).collect();
        let out: Vec<Vec<f64>> = (0..n).map(|_| vec![next(), next() - 0.5]).collect();
        let got = aggregate_lateral(&out, &mask, h, w).unwrap();
        for i in 0..h {
            for j in 0..w {
                let mut expect = [0.0; 2];
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w && mask[a as usize * w + b as usize] {
                        let v = &out[a as usize * w + b as usize];
                        expect[0] += v[0] / 4.0;
                        expect[1] += v[1] / 4.0;
                    }
                }
                let g = &got[i * w + j];
                prop_assert!((g[0] - expect[0]).abs() < 1e-14 && (g[1] - expect[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn positional_codes_are_bounded_and_distinct(i in 0usize..64, j in 0usize..64, d in (1usize..12).prop_map(|k| 2 * k)) {
        let c = positional_code(i, j, d).unwrap();
        prop_assert_eq!(c.len(), d);
        prop_assert!(c.iter().all(|v| v.abs() <= 1.0));
        if d >= 4 {
            let other = positional_code(i + 1, j, d).unwrap();
            prop_assert_ne!(c, other);
        }
    }

    #[test]
    fn corpus_splits_partition_sequences(n in 3usize..40, tr in 1usize..10, va in 0usize..10, te in 0usize..10) {
        let frames = vec![12; n];
        let spec = SplitSpec { train: tr, val: va, test: te };
        match make_splits(&frames, spec) {
            Ok(sets) => {
                let mut seen: Vec<usize> = sets.iter().flat_map(|s| s.windows.iter().map(|w| w.sequence)).collect();
                prop_assert_eq!(seen.len(), tr + va + te);
                seen.sort_unstable();
                seen.dedup();
                prop_assert_eq!(seen.len(), tr + va + te);
            }
            Err(_) => prop_assert!(tr + va + te > n),
        }
    }

    #[test]
    fn f64_datasets_round_trip_bit_exactly(
        frames in 1usize..4,
        h in 1usize..5,
        w in 1usize..5,
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 64),
    ) {
        let n = frames * h * w;
        let data: Vec<f64> = values.iter().cycle().take(n).copied().collect();
        let seq = GridSequence::new(frames, h, w, data, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&seq, dir.path(), DataType::F64).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        prop_assert!(back.data().iter().zip(seq.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.dt(), 0.25);
    }

    #[test]
    fn butterworth_passes_dc(order in (1usize..4).prop_map(|k| 2 * k), cutoff in 0.5f64..20.0) {
        let bw = Butterworth::lowpass(order, cutoff, 50.0).unwrap();
        let y = bw.filtfilt(&vec![1.5; 200]);
        prop_assert!(y.iter().all(|v| (v - 1.5).abs() < 1e-9));
    }

    #[test]
    fn gray_level_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, scale in 0.1f64..4.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(gray_level(lo, scale) <= gray_level(hi, scale));
        prop_assert_eq!(gray_level(0.0, scale), 128);
    }

    #[test]
    fn dopri5_tracks_linear_decay(k in 0.1f64..5.0, z0 in -3.0f64..3.0) {
        let s = dopri5(|_, z| Ok(z.iter().map(|v| -k * v).collect()), &[z0], 0.0, 1.0, &Dopri5Config::default()).unwrap();
        let exact = z0 * (-k).exp();
        prop_assert!((s.z[0] - exact).abs() <= 1e-2 * (1.0 + exact.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn centered_wave_stays_mirror_symmetric(half in 2usize..6, steps in 3usize..40) {
        let n = 2 * half + 1;
        let c = half as f64;
        let seq = simulate(&WaveConfig { height: n, width: n, center: (c, c), steps, ..WaveConfig::default() }).unwrap();
        let f = seq.frame(steps - 1);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((f[i * n + j] - f[(n - 1 - i) * n + j]).abs() < 1e-12);
                prop_assert!((f[i * n + j] - f[j * n + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forecaster_ignores_cell_stacking_order(seed in any::<u64>(), shift in 1usize..19) {
        let cfg = StpcnnConfig { hidden: 6, fusion_dim: 4, tn_hidden: 4, ..StpcnnConfig::default() };
        let model = Stpcnn::new(cfg, seed).unwrap();
        let seq = simulate(&WaveConfig { height: 4, width: 5, center: (1.0, 2.0), steps: 8, ..WaveConfig::default() }).unwrap();
        let order: Vec<usize> = (0..20).map(|k| (k * 3 + shift) % 20).collect();
        let physics = Physics::TruthWave { speed: 3.0, dx: 1.0, dy: 1.0 };
        let a = rollout(&model, &seq, 3, 4, &physics).unwrap();
        let b = rollout_with_layout(&model, &seq, 3, 4, &physics, &Layout::permuted(4, 5, order).unwrap()).unwrap();
        for (x, y) in a.predictions.data().iter().zip(b.predictions.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

/// Positional codes make the forecaster location-aware, so shifting the
/// input field does not simply shift the output.
#[test]
fn shifting_the_field_is_not_equivariant() {
    let cfg = StpcnnConfig {
        hidden: 8,
        fusion_dim: 4,
        tn_hidden: 4,
        ..StpcnnConfig::default()
    };
    let model = Stpcnn::new(cfg, 17).unwrap();
    let (h, w) = (6, 6);
    let seq = simulate(&WaveConfig {
        height: h,
        width: w,
        center: (2.0, 2.0),
        steps: 6,
        ..WaveConfig::default()
    })
    .unwrap();
    let shifted = simulate(&WaveConfig {
        height: h,
        width: w,
        center: (3.0, 2.0),
        steps: 6,
        ..WaveConfig::default()
    })
    .unwrap();
    let a = rollout(&model, &seq, 3, 0, &Physics::None).unwrap();
    let b = rollout(&model, &shifted, 3, 0, &Physics::None).unwrap();
    // Compare interior cells of the first prediction after a one-row shift.
    let (fa, fb) = (a.predictions.frame(0), b.predictions.frame(0));
    let worst = (1..h - 2)
        .flat_map(|i| (1..w - 1).map(move |j| (i, j)))
        .map(|(i, j)| (fa[i * w + j] - fb[(i + 1) * w + j]).abs())
        .fold(0.0, f64::max);
    assert!(worst > 1e-9, "outputs shifted with the input ({worst:e})");
}
