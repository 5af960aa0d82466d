use crate::grid::GridField;

/// `(u, u_x, u_y, u_xx, u_yy, boundary_flag)` at one cell.
pub type Derivatives = [f64; 6];

/// Derivative pair `(first, second)` along one axis.
///
/// `at(k)` reads offset `k` along the axis and returns `None` off the grid.
/// Masked neighbors read as 0 and raise the flag.
fn axis(at: &dyn Fn(isize) -> Option<(f64, bool)>, h: f64, flag: &mut bool) -> (f64, f64) {
    let u0 = at(0).map(|v| v.0).unwrap_or(0.0);
    let read = |k: isize, flag: &mut bool| {
        at(k).map(|(v, active)| {
            if !active {
                *flag = true;
            }
            v
        })
    };
    match (read(-1, flag), read(1, flag)) {
        (Some(m), Some(p)) => ((p - m) / (2.0 * h), (p - 2.0 * u0 + m) / (h * h)),
        (None, None) => {
            *flag = true;
            (0.0, 0.0)
        }
        (m, p) => {
            *flag = true;
            // One-sided toward the interior: direction +1 if the minus side is missing.
            let dir: isize = if m.is_none() { 1 } else { -1 };
            let s = dir as f64;
            let u1 = p.or(m).expect("one side present");
            match read(2 * dir, flag) {
                Some(u2) => (
                    s * (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h),
                    (u0 - 2.0 * u1 + u2) / (h * h),
                ),
                None => (s * (u1 - u0) / h, 0.0),
            }
        }
    }
}

/// Finite-difference features of `field` at `(i, j)`.
///
/// Central stencils in the interior, one-sided stencils where the grid
/// ends, masked neighbors read as 0. The last entry is 1 whenever any of
/// those fallbacks was used. A cell without active neighbors gets zero
/// derivatives.
pub fn spatial_derivatives(
    field: &GridField,
    mask: &[bool],
    i: usize,
    j: usize,
    dx: f64,
    dy: f64,
) -> Derivatives {
    let (h, w) = field.dims();
    let u = field.at(i, j);
    let cell = |a: isize, b: isize| -> Option<(f64, bool)> {
        if a < 0 || b < 0 || a as usize >= h || b as usize >= w {
            return None;
        }
        let (a, b) = (a as usize, b as usize);
        let active = mask[a * w + b];
        Some((if active { field.at(a, b) } else { 0.0 }, active))
    };
    let (ii, jj) = (i as isize, j as isize);
    let neighbors = [(ii - 1, jj), (ii + 1, jj), (ii, jj - 1), (ii, jj + 1)];
    if !neighbors
        .iter()
        .any(|&(a, b)| cell(a, b).is_some_and(|c| c.1))
    {
        return [u, 0.0, 0.0, 0.0, 0.0, 1.0];
    }
    let mut flag = false;
    let (ux, uxx) = axis(&|k| cell(ii + k, jj), dx, &mut flag);
    let (uy, uyy) = axis(&|k| cell(ii, jj + k), dy, &mut flag);
    [u, ux, uy, uxx, uyy, if flag { 1.0 } else { 0.0 }]
}

/// Features for every cell of a frame, row-major.
pub fn frame_derivatives(field: &GridField, mask: &[bool], dx: f64, dy: f64) -> Vec<Derivatives> {
    let (h, w) = field.dims();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(spatial_derivatives(field, mask, i, j, dx, dy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(h: usize, w: usize) -> Vec<bool> {
        vec![true; h * w]
    }

    #[test]
    fn constant_field_has_zero_derivatives_everywhere() {
        let f = GridField::from_fn(5, 4, |_, _| 2.5);
        for d in frame_derivatives(&f, &full(5, 4), 1.0, 1.0) {
            assert_eq!(d[0], 2.5);
            assert!(d[1..5].iter().all(|v| v.abs() < 1e-12), "{d:?}");
        }
    }

    #[test]
    fn linear_field_slope_including_edges() {
        let f = GridField::from_fn(6, 3, |i, _| i as f64);
        for d in frame_derivatives(&f, &full(6, 3), 1.0, 1.0) {
            assert!((d[1] - 1.0).abs() < 1e-12 && d[3].abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn quadratic_second_derivative_is_exact() {
        let f = GridField::from_fn(7, 7, |i, j| (i * i) as f64 + 0.5 * (j * j) as f64);
        for i in 0..7 {
            for j in 0..7 {
                let d = spatial_derivatives(&f, &full(7, 7), i, j, 1.0, 1.0);
                assert!(
                    (d[3] - 2.0).abs() < 1e-12 && (d[4] - 1.0).abs() < 1e-12,
                    "({i},{j}) {d:?}"
                );
            }
        }
    }

    #[test]
    fn flag_marks_edges_and_masked_neighbors() {
        let f = GridField::from_fn(4, 4, |i, j| (i + j) as f64);
        let mut mask = full(4, 4);
        assert_eq!(spatial_derivatives(&f, &mask, 1, 1, 1.0, 1.0)[5], 0.0);
        assert_eq!(spatial_derivatives(&f, &mask, 0, 1, 1.0, 1.0)[5], 1.0);
        mask[2 * 4 + 1] = false;
        let d = spatial_derivatives(&f, &mask, 1, 1, 1.0, 1.0);
        assert_eq!(d[5], 1.0);
        // Masked neighbor (2,1) reads as 0: u_x = (0 - 1) / 2.
        assert!((d[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn isolated_cell_gets_zero_derivatives() {
        let f = GridField::from_fn(3, 3, |_, _| 1.0);
        let mut mask = vec![false; 9];
        mask[4] = true;
        assert_eq!(
            spatial_derivatives(&f, &mask, 1, 1, 1.0, 1.0),
            [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }
}
