//! Full-lap inference: windows are chained around the lap, each one conditioned on the
//! offsets predicted so far.

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::model::{predict_windows, NetWeights};
use super::windows::{window_at, TrackFeatures};
use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};
use crate::seeds::{solve_qp, QpProblem, QP_MAX_ITER};

const SMOOTH_QP_TOL: f64 = 1e-8;

/// Weight of the second-difference penalty in the output smoother.
pub const OUTPUT_SMOOTHING: f64 = 1.0e4;

/// The raw autoregressive prediction (m): starts from a zero history, advances by `T`
/// samples per window, then re-predicts the first window once with the lap's tail as its
/// history.
pub fn rollout(weights: &NetWeights, features: &TrackFeatures) -> Result<Vec<f64>> {
    weights.descriptor.validate()?;
    let shape = weights.descriptor.window();
    let n = features.len();
    let mut offsets = vec![0.0; n];
    let predict = |start: usize, offsets: &mut Vec<f64>| -> Result<()> {
        let w = window_at(features, offsets, &weights.stats, shape, start);
        let out = predict_windows(weights, &[&w])?.remove(0);
        for (j, v) in out.into_iter().enumerate() {
            if start + j < n {
                offsets[start + j] = v;
            }
        }
        Ok(())
    };
    for start in (0..n).step_by(shape.target) {
        predict(start, &mut offsets)?;
    }
    predict(0, &mut offsets)?;
    Ok(offsets)
}

/// Smooth projection of `y` into the corridor: minimizes `|x - y|^2 + lambda |D2 x|^2`
/// (periodic second differences) subject to `-b_right + margin <= x <= b_left - margin`.
/// Unlike a per-sample clamp this meets the bounds tangentially, without curvature spikes.
pub fn smooth_within(track: &TrackModel, y: &[f64], lambda: f64, margin: f64) -> Result<Vec<f64>> {
    let n = track.len();
    if y.len() != n {
        return Err(Error::CountMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    // objective scaled by 1 / (1 + lambda) so the KKT tolerance means the same for any lambda
    let w = 1.0 / (1.0 + lambda);
    let mut coo = CooMatrix::new(n, n);
    // D2'D2 of the periodic second difference is the 5-point stencil 1 -4 6 -4 1
    for i in 0..n {
        for (k, c) in [1.0, -4.0, 6.0, -4.0, 1.0].iter().enumerate() {
            let diag = if k == 2 { 2.0 } else { 0.0 };
            coo.push(i, (i + n + k - 2) % n, w * (2.0 * lambda * c + diag));
        }
    }
    let g = y.iter().map(|v| -2.0 * w * v).collect();
    let lower = track.border_right().iter().map(|b| -b + margin).collect();
    let upper = track.border_left().iter().map(|b| b - margin).collect();
    let problem = QpProblem::new(CsrMatrix::from(&coo), g, lower, upper)?;
    Ok(solve_qp(&problem, SMOOTH_QP_TOL, QP_MAX_ITER)?.x)
}

/// Full-lap raceline: [`rollout`], then [`smooth_within`] the corridor shrunk by `margin`.
pub fn predict_full_lap(weights: &NetWeights, track: &TrackModel, margin: f64) -> Result<RacelineOffset> {
    let raw = rollout(weights, &TrackFeatures::of(track))?;
    RacelineOffset::new(track, smooth_within(track, &raw, OUTPUT_SMOOTHING, margin)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, circle_centerline, TrackOptions};
    use crate::net::model::Descriptor;
    use crate::net::windows::FeatureStats;

    #[test]
    fn zero_network_gives_centerline_and_output_is_clamped() {
        let raw = circle_centerline(60.0, 4.0, 4.0, 200, false);
        let track = build_track(&raw, &TrackOptions::default()).unwrap();
        let d = Descriptor {
            history_len: 10,
            future_len: 20,
            target_len: 7,
            channels: 4,
            hidden: 8,
            heads: 2,
            ..Descriptor::default()
        };
        let mut w = NetWeights::init(&d, FeatureStats::identity(), 1).unwrap();
        w.zero_output_layer();
        let line = predict_full_lap(&w, &track, 1.5).unwrap();
        assert_eq!(line.offsets.len(), track.len());
        assert!(line.offsets.iter().all(|&v| v == 0.0));

        // the output bias is the last tensor; 10 m everywhere projects onto 4 - 1.5
        let last = w.params.len() - d.target_len;
        w.params[last..].iter_mut().for_each(|b| *b = 10.0);
        let line = predict_full_lap(&w, &track, 1.5).unwrap();
        assert!(line.offsets.iter().all(|&v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn smoother_stationarity_and_bounds() {
        let raw = circle_centerline(80.0, 5.0, 5.0, 300, false);
        let track = build_track(&raw, &TrackOptions::default()).unwrap();
        let n = track.len();
        // jagged input that also overshoots the left border
        let y: Vec<f64> = (0..n).map(|i| 6.0 * (i as f64 * 0.05).sin() + if i % 2 == 0 { 0.4 } else { -0.4 }).collect();
        let lam = 50.0;
        let x = smooth_within(&track, &y, lam, 1.0).unwrap();
        assert!(x.iter().all(|v| (-4.0 - 1e-9..=4.0 + 1e-9).contains(v)));
        // gradient of the objective vanishes on free samples and points outward on active ones
        let d2 = |v: &[f64], i: usize| v[(i + 1) % n] - 2.0 * v[i] + v[(i + n - 1) % n];
        let d: Vec<f64> = (0..n).map(|i| d2(&x, i)).collect();
        for i in 0..n {
            let grad = 2.0 * (x[i] - y[i]) + 2.0 * lam * d2(&d, i);
            if x[i] > -4.0 + 1e-6 && x[i] < 4.0 - 1e-6 {
                assert!(grad.abs() < 1e-6, "{i}: {grad}");
            } else if x[i] >= 4.0 - 1e-6 {
                assert!(grad <= 1e-6, "{i}: {grad}");
            } else {
                assert!(grad >= -1e-6, "{i}: {grad}");
            }
        }
        // no kinks left: second differences far below those of the input
        let rough = |v: &[f64]| (0..n).map(|i| d2(v, i).powi(2)).sum::<f64>();
        assert!(rough(&x) < 1e-2 * rough(&y));
    }
}
