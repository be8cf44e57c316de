//! Forward-backward velocity profiling on a closed path under a friction ellipse.

use super::path::{path_geometry, PathGeometry};
use super::VehicleParams;
use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};

/// Floor on `|kappa|` in the lateral speed cap (1/m).
pub const CURVATURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SpeedProfile {
    /// Speed per node (m/s).
    pub speed: Vec<f64>,
    pub lap_time: f64,
}

/// Lap time of per-node speeds over the segment lengths, trapezoidal in inverse speed.
pub fn lap_time_from(seg_len: &[f64], speed: &[f64]) -> f64 {
    let n = speed.len();
    (0..n)
        .map(|i| 2.0 * seg_len[i] / (speed[i] + speed[(i + 1) % n]))
        .sum()
}

/// Largest squared speed at the braking node given the squared speed `w_next` after it.
///
/// Solves `w - w_next = c * sqrt(1 - (k w)^2)` for `w`, where `c = 2 * len * a_brake`
/// and `k = |kappa| / (mu g)`.
fn braking_limit(w_next: f64, c: f64, k: f64) -> f64 {
    let disc = 1.0 + c * c * k * k - k * k * w_next * w_next;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    (w_next + c * disc.sqrt()) / (1.0 + c * c * k * k)
}

pub(crate) fn profile_squared(geo: &PathGeometry, params: &VehicleParams) -> Result<Vec<f64>> {
    let n = geo.curvature.len();
    let mu_g = params.mu * params.g;
    let v_max2 = params.v_max * params.v_max;
    let mut w: Vec<f64> = Vec::with_capacity(n);
    for (i, &kappa) in geo.curvature.iter().enumerate() {
        if !kappa.is_finite() {
            return Err(Error::UnreachableSegment {
                index: i,
                curvature: kappa,
            });
        }
        let cap = mu_g / kappa.abs().max(CURVATURE_FLOOR);
        if cap < 1e-9 {
            return Err(Error::UnreachableSegment {
                index: i,
                curvature: kappa,
            });
        }
        w.push(cap.min(v_max2));
    }
    let k: Vec<f64> = geo.curvature.iter().map(|c| c.abs() / mu_g).collect();

    for _round in 0..200 {
        let before: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        for step in 0..2 * n {
            let i = step % n;
            let j = (i + 1) % n;
            let lat = (k[i] * w[i]).min(1.0);
            let allowed = w[i] + 2.0 * geo.seg_len[i] * params.a_drive * (1.0 - lat * lat).max(0.0).sqrt();
            if w[j] > allowed {
                w[j] = allowed;
            }
        }
        for step in 0..2 * n {
            let i = n - 1 - (step % n);
            let j = (i + 1) % n;
            if w[i] > w[j] {
                let limit = braking_limit(w[j], 2.0 * geo.seg_len[i] * params.a_brake, k[i]);
                if w[i] > limit {
                    w[i] = limit;
                }
            }
        }
        let change = w
            .iter()
            .zip(&before)
            .map(|(x, b)| (x.sqrt() - b).abs())
            .fold(0.0, f64::max);
        if change < 1e-6 {
            break;
        }
    }
    Ok(w)
}

/// Speed profile and lap time of a raceline.
pub fn velocity_profile_fb(
    track: &TrackModel,
    line: &RacelineOffset,
    params: &VehicleParams,
) -> Result<SpeedProfile> {
    line.check_matches(track)?;
    let geo = path_geometry(track, &line.offsets);
    let w = profile_squared(&geo, params)?;
    let speed: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let lap_time = lap_time_from(&geo.seg_len, &speed);
    Ok(SpeedProfile { speed, lap_time })
}

/// Lap time of a raceline under the forward-backward profile.
pub fn lap_time_of(track: &TrackModel, line: &RacelineOffset, params: &VehicleParams) -> Result<f64> {
    Ok(velocity_profile_fb(track, line, params)?.lap_time)
}
