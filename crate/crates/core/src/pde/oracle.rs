use nalgebra::DMatrix;

use super::coeffs::{PdeCoefficients, TERMS};
use crate::error::{Error, Result};

/// Relative gap below which the two smallest singular values are treated
/// as tied.
const TIE: f64 = 1e-9;

/// Null-space estimate of a dictionary matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullSpace {
    pub coefficients: PdeCoefficients,
    pub singular_value: f64,
    /// More than one direction reaches the smallest singular value.
    pub ambiguous: bool,
}

/// Right singular vector of the smallest singular value of `rows` (`K x 7`).
pub fn svd_nullspace_oracle(rows: &[[f64; TERMS]]) -> Result<NullSpace> {
    if rows.len() < TERMS {
        return Err(Error::contract(format!(
            "null-space oracle needs at least {TERMS} rows, got {}",
            rows.len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let d = DMatrix::from_row_slice(rows.len(), TERMS, &flat);
    let svd = d.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerics("SVD did not converge".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let (lo, next) = (order[0], order[1]);
    let top = sv[order[order.len() - 1]].max(f64::MIN_POSITIVE);
    let ambiguous = (sv[next] - sv[lo]) <= TIE * top;
    if ambiguous {
        log::warn!("dictionary null space has dimension > 1; returning one minimizer");
    }
    let raw: [f64; TERMS] = std::array::from_fn(|k| v_t[(lo, k)]);
    Ok(NullSpace {
        coefficients: PdeCoefficients::new(raw)?.canonical(),
        singular_value: sv[lo],
        ambiguous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::coeffs::pde_error;

    #[test]
    fn recovers_planted_direction() {
        let c = [0.2, -0.6, -0.6, 0.1, 0.0, 0.3, -0.2];
        // Rows orthogonal to c: project pseudo-random rows.
        let n2: f64 = c.iter().map(|v| v * v).sum();
        let rows: Vec<[f64; TERMS]> = (0..40)
            .map(|r| {
                let mut row: [f64; TERMS] = std::array::from_fn(|k| {
                    (((r * 7 + k) * 2654435761usize) % 1000) as f64 / 500.0 - 1.0
                });
                let dot: f64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(&c).for_each(|(a, b)| *a -= dot / n2 * b);
                row
            })
            .collect();
        let ns = svd_nullspace_oracle(&rows).unwrap();
        assert!(pde_error(ns.coefficients.values(), &c).unwrap() < 1e-6);
        assert!(!ns.ambiguous);
    }

    #[test]
    fn zero_column_gives_unit_vector_on_that_axis() {
        let rows: Vec<[f64; TERMS]> = (0..10)
            .map(|r| {
                std::array::from_fn(|k| {
                    if k == 3 {
                        0.0
                    } else {
                        ((r + 1) * (k + 2)) as f64 % 7.0 + (k * r) as f64 * 0.01
                    }
                })
            })
            .collect();
        let ns = svd_nullspace_oracle(&rows).unwrap();
        let norm: f64 = ns
            .coefficients
            .values()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(matches!(
            svd_nullspace_oracle(&[[1.0; TERMS]; 3]),
            Err(Error::Contract(_))
        ));
    }
}
