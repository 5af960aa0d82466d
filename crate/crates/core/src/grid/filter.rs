//! Butterworth low-pass as cascaded biquads (bilinear transform with
//! frequency pre-warping), applied forward-backward for zero phase.

use std::f64::consts::PI;

use super::GridSequence;
use crate::error::{Error, Result};

/// Second-order section, transposed direct form II. `a0` is normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Run the section over `x` starting from state `(z1, z2)`.
    fn run(&self, x: &mut [f64], mut z1: f64, mut z2: f64) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }

    /// State that makes a constant input `c` pass through at steady state.
    fn steady_state(&self, c: f64) -> (f64, f64) {
        let gain = self.dc_gain();
        let y = gain * c;
        let z2 = self.b[2] * c - self.a[1] * y;
        let z1 = self.b[1] * c - self.a[0] * y + z2;
        (z1, z2)
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
}

impl Butterworth {
    /// Even `order` low-pass with -3 dB at `cutoff_hz`.
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_hz: f64) -> Result<Self> {
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::config(format!(
                "Butterworth order must be even and positive, got {order}"
            )));
        }
        if !(sample_hz > 0.0) || !(cutoff_hz > 0.0) || cutoff_hz >= sample_hz / 2.0 {
            return Err(Error::config(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) for sampling at {sample_hz} Hz",
                sample_hz / 2.0
            )));
        }
        let k = (PI * cutoff_hz / sample_hz).tan();
        let sections = (0..order / 2)
            .map(|s| {
                // Analog section s^2 + s/q + 1 from one conjugate pole pair.
                let inv_q = 2.0 * (PI * (2 * s + 1) as f64 / (2 * order) as f64).sin();
                let norm = 1.0 / (1.0 + k * inv_q + k * k);
                let b0 = k * k * norm;
                Biquad {
                    b: [b0, 2.0 * b0, b0],
                    a: [2.0 * (k * k - 1.0) * norm, (1.0 - k * inv_q + k * k) * norm],
                }
            })
            .collect();
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Single causal pass from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, 0.0, 0.0);
        }
        y
    }

    fn pass_from_steady_state(&self, y: &mut [f64]) {
        for s in &self.sections {
            let c = y.first().copied().unwrap_or(0.0);
            let (z1, z2) = s.steady_state(c);
            s.run(y, z1, z2);
        }
    }

    /// Forward-backward application with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        self.pass_from_steady_state(&mut ext);
        ext.reverse();
        self.pass_from_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth low-pass of one series.
pub fn butterworth_lowpass(
    series: &[f64],
    order: usize,
    cutoff_hz: f64,
    sample_hz: f64,
) -> Result<Vec<f64>> {
    Ok(Butterworth::lowpass(order, cutoff_hz, sample_hz)?.filtfilt(series))
}

/// Filter every active cell's time series; masked cells stay 0.
pub fn filter_sequence(seq: &GridSequence, order: usize, cutoff_hz: f64) -> Result<GridSequence> {
    let filt = Butterworth::lowpass(order, cutoff_hz, 1.0 / seq.dt())?;
    let mut out = seq.clone();
    let (h, w) = (seq.height(), seq.width());
    for i in 0..h {
        for j in 0..w {
            if !seq.mask()[i * w + j] {
                continue;
            }
            let y = filt.filtfilt(&seq.series(i, j));
            for (t, v) in y.into_iter().enumerate() {
                out.data_mut()[(t * h + i) * w + j] = v;
            }
        }
    }
    out.apply_mask();
    Ok(out)
}
