//! Direct transcription of the minimum-lap-time problem on the arc-length grid.
//!
//! Decision vector: `x = [d_0 .. d_{N-1}, w_0 .. w_{N-1}]` with `d` the lateral offsets and
//! `w = v^2` the squared speeds. Periodic closure is built into the indexing (node `N` is
//! node `0`). Constraint `i` is the friction ellipse at node `i`:
//!
//! ```text
//! (a_i / a_cap)^2 + (w_i kappa_i / (mu g))^2 - 1 <= 0,   a_i = (w_{i+1} - w_i) / (2 len_i)
//! ```
//!
//! with `a_cap` the driving limit for `a_i >= 0` and the braking limit otherwise. Track
//! bounds and the top speed are simple variable bounds.

use log::warn;

use super::path::{path_geometry, path_geometry_with_derivatives};
use super::profile::profile_squared;
use super::VehicleParams;
use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};

/// Lower bound on the squared speed (m^2/s^2).
pub const MIN_SQUARED_SPEED: f64 = 1.0;

/// The start speeds sit this fraction below the forward-backward profile so that every
/// friction constraint starts strictly inactive.
pub const START_SPEED_FACTOR: f64 = 0.99;

/// Non-zeros per constraint row: `d[i-1], d[i], d[i+1], w[i], w[i+1]`.
pub const ROW_WIDTH: usize = 5;

/// Objective, gradient, constraint values and sparse constraint Jacobian at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub constraints: Vec<f64>,
    /// Entries per Jacobian row; row `i` occupies `[i * row_width, (i + 1) * row_width)`.
    /// Unused slots hold zeros.
    pub row_width: usize,
    pub jac_cols: Vec<usize>,
    pub jac_vals: Vec<f64>,
}

impl Evaluation {
    /// Accumulates `J^T m` into `out`.
    pub fn add_jacobian_transpose(&self, m: &[f64], out: &mut [f64]) {
        for (i, &mi) in m.iter().enumerate() {
            if mi == 0.0 {
                continue;
            }
            let base = i * self.row_width;
            for k in 0..self.row_width {
                out[self.jac_cols[base + k]] += mi * self.jac_vals[base + k];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinTimeNlp<'a> {
    track: &'a TrackModel,
    params: VehicleParams,
    lower: Vec<f64>,
    upper: Vec<f64>,
    start: Vec<f64>,
}

/// Builds the NLP seeded with `seed` (clamped into the corridor) and its
/// forward-backward speed profile.
pub fn build_nlp<'a>(
    track: &'a TrackModel,
    seed: &RacelineOffset,
    params: &VehicleParams,
) -> Result<MinTimeNlp<'a>> {
    params.validate()?;
    seed.check_matches(track)?;
    let n = track.len();
    let mut lower = Vec::with_capacity(2 * n);
    let mut upper = Vec::with_capacity(2 * n);
    for i in 0..n {
        let lo = -track.border_right()[i] + params.half_width;
        let hi = track.border_left()[i] - params.half_width;
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
    let v_max2 = params.v_max * params.v_max;
    lower.extend(std::iter::repeat_n(MIN_SQUARED_SPEED.min(v_max2), n));
    upper.extend(std::iter::repeat_n(v_max2, n));

    let mut clamped = 0;
    let mut d: Vec<f64> = seed.offsets.clone();
    for i in 0..n {
        let c = d[i].clamp(lower[i], upper[i]);
        if c != d[i] {
            clamped += 1;
            d[i] = c;
        }
    }
    if clamped > 0 {
        warn!("seed clamped into the drivable corridor at {clamped} samples");
    }
    let geo = path_geometry(track, &d);
    let w = profile_squared(&geo, params)?;
    let mut start = d;
    let back_off = START_SPEED_FACTOR * START_SPEED_FACTOR;
    start.extend(w.iter().map(|&x| (back_off * x).clamp(lower[n], v_max2)));
    Ok(MinTimeNlp {
        track,
        params: *params,
        lower,
        upper,
        start,
    })
}

impl<'a> MinTimeNlp<'a> {
    pub fn nodes(&self) -> usize {
        self.track.len()
    }

    pub fn num_vars(&self) -> usize {
        2 * self.track.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.track.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Seed offsets and their forward-backward squared speeds.
    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn track(&self) -> &TrackModel {
        self.track
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.nodes();
        let geo = path_geometry(self.track, &x[..n]);
        let w = &x[n..];
        (0..n)
            .map(|i| 2.0 * geo.seg_len[i] / (w[i].sqrt() + w[(i + 1) % n].sqrt()))
            .sum()
    }

    pub fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate(x).constraints
    }

    /// Largest positive constraint or bound violation.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max);
        self.constraints(x).into_iter().fold(bounds, f64::max)
    }

    /// Gradient of `obj_factor * f + lambda^T g`.
    pub fn lagrangian_gradient(&self, x: &[f64], obj_factor: f64, lambda: &[f64]) -> Vec<f64> {
        let eval = self.evaluate(x);
        let mut grad: Vec<f64> = eval.gradient.iter().map(|g| g * obj_factor).collect();
        eval.add_jacobian_transpose(lambda, &mut grad);
        grad
    }

    /// Lagrangian Hessian by central differences of [`Self::lagrangian_gradient`].
    ///
    /// A variable at node `j` only interacts with nodes `j-2 ..= j+2`, so nodes five apart
    /// are perturbed together: the whole Hessian costs about twenty gradient evaluations.
    pub fn lagrangian_hessian(
        &self,
        x: &[f64],
        obj_factor: f64,
        lambda: &[f64],
    ) -> Vec<(usize, usize, f64)> {
        let n = self.nodes();
        let full = 5 * (n / 5);
        let color = |j: usize| if j < full { j % 5 } else { 5 + j - full };
        let colors = 5 + n - full;
        let mut out = Vec::with_capacity(2 * n * 20);
        for kind in 0..2 {
            for c in 0..colors {
                let members: Vec<usize> = (0..n).filter(|&j| color(j) == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                let mut steps = Vec::with_capacity(members.len());
                for &j in &members {
                    let v = kind * n + j;
                    let h = 6e-6 * x[v].abs().max(1.0);
                    xp[v] += h;
                    xm[v] -= h;
                    steps.push(h);
                }
                let gp = self.lagrangian_gradient(&xp, obj_factor, lambda);
                let gm = self.lagrangian_gradient(&xm, obj_factor, lambda);
                for (&j, &h) in members.iter().zip(&steps) {
                    let col = kind * n + j;
                    let mut near: Vec<usize> = (0..5).map(|o| (j + n + o - 2) % n).collect();
                    near.sort_unstable();
                    near.dedup();
                    for k in near {
                        for row in [k, n + k] {
                            let v = (gp[row] - gm[row]) / (2.0 * h);
                            if v != 0.0 {
                                // each pair is visited from both sides; halves average them
                                out.push((row, col, 0.5 * v));
                                out.push((col, row, 0.5 * v));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Node-interleaved elimination order `d_0, w_0, d_1, w_1, ...` keeping the Newton
    /// matrix banded.
    pub fn ordering(&self) -> Vec<usize> {
        let n = self.nodes();
        (0..n).flat_map(|j| [j, n + j]).collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        let n = self.nodes();
        let (d, w) = x.split_at(n);
        let (geo, der) = path_geometry_with_derivatives(self.track, d);
        let mu_g = self.params.mu * self.params.g;
        let inv_mu_g2 = 1.0 / (mu_g * mu_g);

        let mut objective = 0.0;
        let mut gradient = vec![0.0; 2 * n];
        let sq: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        for i in 0..n {
            let j = (i + 1) % n;
            let sum = sq[i] + sq[j];
            let len = geo.seg_len[i];
            objective += 2.0 * len / sum;
            let dt_dlen = 2.0 / sum;
            gradient[i] += dt_dlen * der.seg_len[i][0];
            gradient[j] += dt_dlen * der.seg_len[i][1];
            let dt_dsum = -2.0 * len / (sum * sum);
            gradient[n + i] += dt_dsum * 0.5 / sq[i];
            gradient[n + j] += dt_dsum * 0.5 / sq[j];
        }

        let mut constraints = Vec::with_capacity(n);
        let mut jac_cols = Vec::with_capacity(n * ROW_WIDTH);
        let mut jac_vals = Vec::with_capacity(n * ROW_WIDTH);
        for i in 0..n {
            let im = (i + n - 1) % n;
            let j = (i + 1) % n;
            let len = geo.seg_len[i];
            let acc = (w[j] - w[i]) / (2.0 * len);
            let cap = if acc >= 0.0 {
                self.params.a_drive
            } else {
                self.params.a_brake
            };
            let kappa = geo.curvature[i];
            let lat = w[i] * kappa;
            constraints.push(acc * acc / (cap * cap) + lat * lat * inv_mu_g2 - 1.0);

            let dg_dacc = 2.0 * acc / (cap * cap);
            let dg_dlen = dg_dacc * (-acc / len);
            let dg_dkappa = 2.0 * lat * w[i] * inv_mu_g2;
            let dg_dwi = dg_dacc * (-1.0 / (2.0 * len)) + 2.0 * lat * kappa * inv_mu_g2;
            let dg_dwj = dg_dacc / (2.0 * len);
            let kd = der.curvature[i];
            let ld = der.seg_len[i];
            jac_cols.extend_from_slice(&[im, i, j, n + i, n + j]);
            jac_vals.extend_from_slice(&[
                dg_dkappa * kd[0],
                dg_dkappa * kd[1] + dg_dlen * ld[0],
                dg_dkappa * kd[2] + dg_dlen * ld[1],
                dg_dwi,
                dg_dwj,
            ]);
        }
        Evaluation {
            objective,
            gradient,
            constraints,
            row_width: ROW_WIDTH,
            jac_cols,
            jac_vals,
        }
    }
}
