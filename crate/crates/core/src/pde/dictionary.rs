use std::sync::Arc;

use super::coeffs::{TERMS, U, U_T, U_TT, U_X, U_XX, U_Y, U_YY};
use super::mlp::CoordMlp;
use crate::error::{Error, Result};
use crate::grid::GridSequence;
use crate::tensor::{Bound, SparseRows, Tape, Var};

/// Axis-aligned box of physical `(x, y, t)` mapped onto `[-1, 1]^3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Domain {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(Error::Domain(format!("empty box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// Box spanned by the cell centers and frame times of `seq`.
    pub fn of_sequence(seq: &GridSequence, dx: f64, dy: f64) -> Result<Self> {
        let hi = [
            (seq.height() - 1) as f64 * dx,
            (seq.width() - 1) as f64 * dy,
            (seq.frames() - 1) as f64 * seq.dt(),
        ];
        Self::new([0.0; 3], hi)
    }

    /// `d(normalized) / d(physical)` per axis.
    pub fn scale(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 2.0 / (self.hi[a] - self.lo[a]))
    }

    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.scale();
        [0, 1, 2].map(|a| (p[a] - self.lo[a]) * s[a] - 1.0)
    }

    /// Factor turning each normalized dictionary column into physical units.
    pub fn term_factors(&self) -> [f64; TERMS] {
        let [sx, sy, st] = self.scale();
        let mut f = [1.0; TERMS];
        f[U_TT] = st * st;
        f[U_XX] = sx * sx;
        f[U_YY] = sy * sy;
        f[U_T] = st;
        f[U_X] = sx;
        f[U_Y] = sy;
        f
    }
}

/// Offsets of the seven stencil evaluations: center, t+, t-, x+, x-, y+, y-.
fn stencil(p: [f64; 3], h: [f64; 3]) -> [[f64; 3]; 7] {
    let [x, y, t] = p;
    [
        [x, y, t],
        [x, y, t + h[2]],
        [x, y, t - h[2]],
        [x + h[0], y, t],
        [x - h[0], y, t],
        [x, y + h[1], t],
        [x, y - h[1], t],
    ]
}

/// Weights of each dictionary term over the stencil blocks.
fn term_weights(h: [f64; 3]) -> [Vec<(usize, f64)>; TERMS] {
    let [hx, hy, ht] = h;
    let mut w: [Vec<(usize, f64)>; TERMS] = Default::default();
    w[U_TT] = vec![
        (1, 1.0 / (ht * ht)),
        (0, -2.0 / (ht * ht)),
        (2, 1.0 / (ht * ht)),
    ];
    w[U_XX] = vec![
        (3, 1.0 / (hx * hx)),
        (0, -2.0 / (hx * hx)),
        (4, 1.0 / (hx * hx)),
    ];
    w[U_YY] = vec![
        (5, 1.0 / (hy * hy)),
        (0, -2.0 / (hy * hy)),
        (6, 1.0 / (hy * hy)),
    ];
    w[U_T] = vec![(1, 0.5 / ht), (2, -0.5 / ht)];
    w[U_X] = vec![(3, 0.5 / hx), (4, -0.5 / hx)];
    w[U_Y] = vec![(5, 0.5 / hy), (6, -0.5 / hy)];
    w[U] = vec![(0, 1.0)];
    w
}

fn check_points(points: &[[f64; 3]], h: [f64; 3]) -> Result<()> {
    if h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::config(format!(
            "finite-difference steps must be positive, got {h:?}"
        )));
    }
    for p in points {
        for a in 0..3 {
            if p[a].abs() > 1.0 - h[a] + 1e-12 {
                return Err(Error::Domain(format!(
                    "point {p:?} within {} of the domain edge",
                    h[a]
                )));
            }
        }
    }
    Ok(())
}

/// Stacked stencil inputs: block `b` holds offset `b` for every point.
fn stencil_rows(points: &[[f64; 3]], h: [f64; 3]) -> Vec<[f64; 3]> {
    let k = points.len();
    let mut rows = vec![[0.0; 3]; 7 * k];
    for (n, p) in points.iter().enumerate() {
        for (b, q) in stencil(*p, h).into_iter().enumerate() {
            rows[b * k + n] = q;
        }
    }
    rows
}

/// `K x 7` dictionary of central differences of `net`, in normalized units.
pub fn eval_dictionary(
    net: &CoordMlp,
    points: &[[f64; 3]],
    h: [f64; 3],
) -> Result<Vec<[f64; TERMS]>> {
    check_points(points, h)?;
    let k = points.len();
    let u = net.predict(&stencil_rows(points, h));
    let weights = term_weights(h);
    Ok((0..k)
        .map(|n| {
            let mut row = [0.0; TERMS];
            for (term, w) in weights.iter().enumerate() {
                row[term] = w.iter().map(|&(b, c)| c * u[b * k + n]).sum();
            }
            row
        })
        .collect())
}

/// Same dictionary recorded on `tape` as a `[K, 7]` variable.
pub fn dictionary_on_tape(
    tape: &mut Tape,
    net: &CoordMlp,
    bound: &Bound,
    points: &[[f64; 3]],
    h: [f64; 3],
) -> Result<Var> {
    check_points(points, h)?;
    let k = points.len();
    let x = tape.constant(CoordMlp::points_tensor(&stencil_rows(points, h)));
    let u = net.forward(tape, bound, x)?;
    let mut cols = Vec::with_capacity(TERMS);
    for w in term_weights(h) {
        let triplets = (0..k).flat_map(|n| w.iter().map(move |&(b, c)| (n, b * k + n, c)));
        let m = Arc::new(SparseRows::from_triplets(k, 7 * k, triplets)?);
        cols.push(tape.sparse_rows(&m, u)?);
    }
    tape.concat(&cols)
}
