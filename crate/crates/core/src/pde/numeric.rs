use super::coeffs::{PdeCoefficients, U, U_T, U_TT, U_X, U_XX, U_Y, U_YY};
use crate::error::{Error, Result};
use crate::grid::GridField;

/// Smallest `|c_tt| / |c|` for which the recovered equation is stepped.
pub const MIN_TT_WEIGHT: f64 = 1e-3;

/// Advance the recovered equation one step: solve for `u_tt`, take spatial
/// terms centrally and `u_t` as a backward difference, then
/// `u_next = 2 u_curr - u_prev + dt^2 u_tt`. Values outside the grid are 0.
pub fn pde_numeric_step(
    u_prev: &GridField,
    u_curr: &GridField,
    c: &PdeCoefficients,
    dt: f64,
    dx: f64,
    dy: f64,
) -> Result<GridField> {
    u_prev.check_same_dims(u_curr)?;
    let c = c.values();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if c[U_TT].abs() < MIN_TT_WEIGHT * norm {
        return Err(Error::DegeneratePde(format!(
            "u_tt coefficient {:.3e} too small to step",
            c[U_TT]
        )));
    }
    let (h, w) = u_curr.dims();
    let mut next = GridField::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let (ii, jj) = (i as isize, j as isize);
            let u = u_curr.at(i, j);
            let (xp, xm) = (u_curr.get(ii + 1, jj), u_curr.get(ii - 1, jj));
            let (yp, ym) = (u_curr.get(ii, jj + 1), u_curr.get(ii, jj - 1));
            let rest = c[U_XX] * (xp - 2.0 * u + xm) / (dx * dx)
                + c[U_YY] * (yp - 2.0 * u + ym) / (dy * dy)
                + c[U_T] * (u - u_prev.at(i, j)) / dt
                + c[U_X] * (xp - xm) / (2.0 * dx)
                + c[U_Y] * (yp - ym) / (2.0 * dy)
                + c[U] * u;
            let u_tt = -rest / c[U_TT];
            next.set(i, j, 2.0 * u - u_prev.at(i, j) + dt * dt * u_tt);
        }
    }
    Ok(next)
}

/// Closed-loop rollout from two known frames; returns `steps` new frames.
pub fn pde_rollout(
    u0: &GridField,
    u1: &GridField,
    c: &PdeCoefficients,
    steps: usize,
    dt: f64,
    dx: f64,
    dy: f64,
) -> Result<Vec<GridField>> {
    let mut out: Vec<GridField> = Vec::with_capacity(steps);
    let (mut prev, mut curr) = (u0.clone(), u1.clone());
    for _ in 0..steps {
        let next = pde_numeric_step(&prev, &curr, c, dt, dx, dy)?;
        prev = std::mem::replace(&mut curr, next.clone());
        out.push(next);
    }
    Ok(out)
}
