//! Geometric initialization seeds: the centerline and the minimum-curvature line.

pub mod qp;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};

pub use qp::{solve_qp, QpProblem, QpSolution};

/// Default lateral margin of the minimum-curvature line (m).
pub const DEFAULT_MC_MARGIN: f64 = 0.5;

/// Stationarity tolerance of the minimum-curvature QP.
pub const MC_QP_TOL: f64 = 1e-8;

/// Iteration cap for the seed QPs. The curvature Hessian is poorly conditioned, so the
/// active set settles slowly: a few hundred iterations is typical on a 5 km circuit.
pub const QP_MAX_ITER: usize = 5000;

/// MC margin used when the line seeds the minimum-time solver: the vehicle half width
/// plus the default clearance, so the seed sits inside the solver's corridor.
pub fn solver_mc_margin(half_width: f64) -> f64 {
    half_width + DEFAULT_MC_MARGIN
}

pub fn centerline_seed(track: &TrackModel) -> RacelineOffset {
    RacelineOffset::zeros(track)
}

/// Curvature of the offset line linearized about the centerline:
/// `kappa_path ~ kappa + D2 a + kappa^2 a` with `D2` the periodic second difference.
fn linearized_curvature_operator(track: &TrackModel) -> CsrMatrix<f64> {
    let n = track.len();
    let inv_h2 = 1.0 / (track.step() * track.step());
    let mut coo = CooMatrix::new(n, n);
    for (i, &k) in track.curvature().iter().enumerate() {
        coo.push(i, (i + n - 1) % n, inv_h2);
        coo.push(i, i, -2.0 * inv_h2 + k * k);
        coo.push(i, (i + 1) % n, inv_h2);
    }
    CsrMatrix::from(&coo)
}

/// `sum_i kappa_path_i^2 * step` under the linearized curvature model.
pub fn linearized_curvature_cost(track: &TrackModel, offsets: &[f64]) -> f64 {
    let a = linearized_curvature_operator(track);
    let mut cost = 0.0;
    for (i, row) in a.row_iter().enumerate() {
        let k: f64 = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&c, v)| v * offsets[c])
            .sum::<f64>()
            + track.curvature()[i];
        cost += k * k;
    }
    cost * track.step()
}

/// Box-constrained QP whose minimizer is the minimum-curvature offset line.
pub fn min_curvature_problem(track: &TrackModel, margin: f64) -> Result<QpProblem> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidInput(format!("margin must be >= 0, got {margin}")));
    }
    let n = track.len();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        let lo = -track.border_right()[i] + margin;
        let hi = track.border_left()[i] - margin;
        if lo > hi {
            return Err(Error::InfeasibleBounds {
                index: i,
                lower: lo,
                upper: hi,
            });
        }
        lower.push(lo);
        upper.push(hi);
    }
    let a = linearized_curvature_operator(track);
    let at = a.transpose();
    let scale = 2.0 * track.step();
    let mut h = &at * &a;
    for v in h.values_mut() {
        *v *= scale;
    }
    // symmetrize away round-off from the sparse product
    let ht = h.transpose();
    let mut coo = CooMatrix::new(n, n);
    for ((r, c, v), (_, _, vt)) in h.triplet_iter().zip(ht.triplet_iter()) {
        coo.push(r, c, 0.5 * (v + vt));
    }
    let h = CsrMatrix::from(&coo);
    let kappa = track.curvature();
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let row = at.row(i);
            scale
                * row
                    .col_indices()
                    .iter()
                    .zip(row.values())
                    .map(|(&c, v)| v * kappa[c])
                    .sum::<f64>()
        })
        .collect();
    QpProblem::new(h, g, lower, upper)
}

/// Minimum-curvature raceline within `[-b_right + margin, b_left - margin]`.
pub fn min_curvature_seed(track: &TrackModel, margin: f64) -> Result<RacelineOffset> {
    let problem = min_curvature_problem(track, margin)?;
    let solution = solve_qp(&problem, MC_QP_TOL, QP_MAX_ITER)?;
    RacelineOffset::new(track, solution.x)
}
