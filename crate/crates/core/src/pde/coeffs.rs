use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dictionary of differential terms, in coefficient order.
pub const DICTIONARY: [&str; 7] = ["u_tt", "u_xx", "u_yy", "u_t", "u_x", "u_y", "u"];
pub const TERMS: usize = DICTIONARY.len();

pub const U_TT: usize = 0;
pub const U_XX: usize = 1;
pub const U_YY: usize = 2;
pub const U_T: usize = 3;
pub const U_X: usize = 4;
pub const U_Y: usize = 5;
pub const U: usize = 6;

/// Unit-norm coefficients of a linear PDE `sum_k c_k D_k(u) = 0`.
/// `c` and `-c` describe the same equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeCoefficients {
    c: [f64; TERMS],
}

impl PdeCoefficients {
    /// Normalize `raw` to unit length.
    pub fn new(raw: [f64; TERMS]) -> Result<Self> {
        let n = norm(&raw);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::contract(format!(
                "coefficients {raw:?} cannot be normalized"
            )));
        }
        Ok(Self {
            c: raw.map(|v| v / n),
        })
    }

    /// `u_tt = speed^2 (u_xx + u_yy)`.
    pub fn wave(speed: f64) -> Self {
        let s2 = speed * speed;
        Self::new([1.0, -s2, -s2, 0.0, 0.0, 0.0, 0.0]).expect("nonzero")
    }

    pub fn values(&self) -> &[f64; TERMS] {
        &self.c
    }

    /// Sign chosen so that the largest-magnitude entry is positive.
    pub fn canonical(&self) -> Self {
        let big = self
            .c
            .iter()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        if big < 0.0 {
            Self {
                c: self.c.map(|v| -v),
            }
        } else {
            *self
        }
    }

    /// Multiply term `k` by `factors[k]` and renormalize.
    pub fn rescaled(&self, factors: &[f64; TERMS]) -> Result<Self> {
        let mut raw = self.c;
        for (v, f) in raw.iter_mut().zip(factors) {
            *v *= f;
        }
        Self::new(raw)
    }

    /// Multiply each term by `1 + fraction * n_k` with `n_k` standard normal
    /// drawn from `seed`, then renormalize.
    pub fn perturbed(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction >= 0.0 && fraction.is_finite()) {
            return Err(Error::config(format!(
                "coefficient noise must be finite and >= 0, got {fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = [0.0; TERMS].map(|_| 1.0 + fraction * rng.sample::<f64, _>(StandardNormal));
        self.rescaled(&factors)
    }

    pub fn save(&self, path: &Path, err_vs: Option<f64>) -> Result<()> {
        let file = CoefficientsFile {
            dictionary: DICTIONARY.iter().map(|s| s.to_string()).collect(),
            c: self.c.to_vec(),
            err_vs,
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CoefficientsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.dictionary.iter().map(String::as_str).ne(DICTIONARY) {
            return Err(Error::format(format!(
                "unexpected dictionary {:?}",
                file.dictionary
            )));
        }
        let c: [f64; TERMS] = file.c.try_into().map_err(|v: Vec<f64>| {
            Error::format(format!("{} coefficients, expected {TERMS}", v.len()))
        })?;
        Self::new(c)
    }
}

/// On-disk coefficient record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsFile {
    pub dictionary: Vec<String>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err_vs: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sqrt(1 - |a.b| / (|a||b|))`: 0 iff colinear, insensitive to scale and sign.
pub fn pde_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "coefficient lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("pde_error of a zero vector"));
    }
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs() / (na * nb);
    Ok((1.0 - cos.min(1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: [f64; 7] = [0.0783, -0.7049, -0.7049, 0.0, 0.0, 0.0, 0.0];

    #[test]
    fn perturbation_is_seeded_and_scales_with_fraction() {
        let c = PdeCoefficients::new(REFERENCE).unwrap();
        assert_eq!(c.perturbed(0.0, 4).unwrap(), c);
        assert_eq!(c.perturbed(0.1, 4).unwrap(), c.perturbed(0.1, 4).unwrap());
        let e5 = pde_error(c.values(), c.perturbed(0.05, 4).unwrap().values()).unwrap();
        let e10 = pde_error(c.values(), c.perturbed(0.10, 4).unwrap().values()).unwrap();
        assert!(e5 > 0.0 && e10 > e5, "{e5} {e10}");
        assert!(c.perturbed(-0.1, 4).is_err());
    }

    #[test]
    fn error_of_identical_and_negated_is_zero() {
        assert_eq!(pde_error(&REFERENCE, &REFERENCE).unwrap(), 0.0);
        let neg = REFERENCE.map(|v| -v);
        assert_eq!(pde_error(&REFERENCE, &neg).unwrap(), 0.0);
    }

    #[test]
    fn error_is_scale_invariant_and_symmetric() {
        let b = [0.3, 0.1, -2.0, 0.0, 1.0, 0.5, -0.2];
        let e = pde_error(&REFERENCE, &b).unwrap();
        assert!((pde_error(&b, &REFERENCE).unwrap() - e).abs() < 1e-15);
        assert!((pde_error(&REFERENCE, &b.map(|v| v * -7.5)).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_contract_error() {
        assert!(matches!(
            pde_error(&[0.0; 7], &REFERENCE),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn wave_speed_three_matches_reference_digits() {
        let w = PdeCoefficients::wave(3.0);
        for (a, b) in w.values().iter().zip(REFERENCE) {
            assert!((a - b).abs() < 5e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn canonical_sign_makes_largest_positive() {
        let c = PdeCoefficients::wave(3.0).canonical();
        assert!(c.values()[1] > 0.0 && c.values()[0] < 0.0);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = PdeCoefficients::new([1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        c.save(&p, Some(0.1)).unwrap();
        let back = PdeCoefficients::load(&p).unwrap();
        assert!(pde_error(back.values(), c.values()).unwrap() < 1e-7);
        assert!(back
            .values()
            .iter()
            .zip(c.values())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
