use crate::error::{Error, Result};

/// Sinusoidal code of one grid cell.
pub type PositionalCode = Vec<f64>;

/// Two-dimensional sinusoidal position code of length `d`.
///
/// The code is a run of `d/2` slot pairs; slot `m` uses frequency
/// `w_k = 1 / 10000^(2k/d)` with `k = m / 2`. Even slots hold
/// `[sin(w_k i), sin(w_k j)]`, odd slots `[cos(w_k i), cos(w_k j)]`, so
/// frequencies decrease along the vector.
pub fn positional_code(i: usize, j: usize, d: usize) -> Result<PositionalCode> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::config(format!(
            "positional dimension must be even and >= 2, got {d}"
        )));
    }
    let (fi, fj) = (i as f64, j as f64);
    let mut code = Vec::with_capacity(d);
    for m in 0..d / 2 {
        let k = (m / 2) as f64;
        let w = 1.0 / 10000f64.powf(2.0 * k / d as f64);
        if m.is_multiple_of(2) {
            code.push((w * fi).sin());
            code.push((w * fj).sin());
        } else {
            code.push((w * fi).cos());
            code.push((w * fj).cos());
        }
    }
    Ok(code)
}

/// Codes for every cell of an `H x W` grid, row-major.
pub fn positional_codes(height: usize, width: usize, d: usize) -> Result<Vec<PositionalCode>> {
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            out.push(positional_code(i, j, d)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn origin_is_sin_zero_cos_one() {
        let c = positional_code(0, 0, 16).unwrap();
        for (m, pair) in c.chunks(2).enumerate() {
            let expect = if m.is_multiple_of(2) { 0.0 } else { 1.0 };
            assert_eq!(pair, &[expect, expect]);
        }
    }

    #[test]
    fn first_frequency_is_one() {
        let c = positional_code(1, 0, 4).unwrap();
        assert!((c[0] - 1f64.sin()).abs() < 1e-15);
        assert!((c[0] - 0.8415).abs() < 1e-4);
        assert!((c[2] - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = positional_code(3, 5, 16).unwrap();
        assert_eq!(a, positional_code(3, 5, 16).unwrap());
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(positional_code(0, 0, 7), Err(Error::Config(_))));
        assert!(matches!(positional_code(0, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn codes_are_injective_on_test_grids() {
        for &(h, w, d) in &[(16, 16, 4), (29, 36, 16), (200, 200, 8)] {
            let codes = positional_codes(h, w, d).unwrap();
            let keys: HashSet<Vec<u64>> = codes
                .iter()
                .map(|c| c.iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(keys.len(), h * w, "{h}x{w} d={d}");
        }
    }

    #[test]
    fn injective_along_far_edges_of_a_large_grid() {
        // Spot-check rows/columns near 10,000 without materializing 1e8 codes.
        let mut seen = HashSet::new();
        let rows: HashSet<usize> = (0..10_000).step_by(37).chain(9_990..10_000).collect();
        for i in rows {
            for j in [0, 1, 4_999, 9_998, 9_999] {
                let c = positional_code(i, j, 4).unwrap();
                assert!(
                    seen.insert(c.iter().map(|v| v.to_bits()).collect::<Vec<_>>()),
                    "({i},{j})"
                );
            }
        }
    }
}
