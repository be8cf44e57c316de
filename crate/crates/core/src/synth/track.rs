//! Parametric closed circuits built from a smoothed curvature profile.
//!
//! A lap is an alternating sequence of straights and constant-radius corners. The corner
//! angles are rescaled so the heading turns by exactly one revolution; the straights are
//! then lengthened or shortened by the minimum-norm correction that closes the position gap.

use std::f64::consts::PI;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_track, RawCenterlinePoint, TrackModel, TrackOptions, Vec2};

/// Parameters of one synthetic circuit. Lengths in meters, curvatures in 1/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSpec {
    pub seed: u64,
    /// Number of corners (each followed by a straight).
    pub corners: usize,
    pub curvature_range: [f64; 2],
    /// Straight length range.
    pub segment_length_range: [f64; 2],
    /// Total width range (left + right).
    pub width_range: [f64; 2],
    /// Length of the moving average that turns curvature steps into ramps.
    pub smoothing: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            corners: 12,
            curvature_range: [1.0 / 200.0, 1.0 / 30.0],
            segment_length_range: [80.0, 500.0],
            width_range: [10.0, 15.0],
            smoothing: 40.0,
        }
    }
}

impl TrackSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Checks ranges and that the narrowest track still fits a car of `half_width` with
    /// `margin` on both sides.
    pub fn validate(&self, half_width: f64, margin: f64) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if self.corners < 3 {
            return Err(Error::InvalidInput(format!(
                "a circuit needs >= 3 corners, got {}",
                self.corners
            )));
        }
        if !ordered(self.curvature_range)
            || !ordered(self.segment_length_range)
            || !ordered(self.width_range)
        {
            return Err(Error::InvalidInput("track spec ranges must be positive and ordered".into()));
        }
        if self.width_range[0] <= 2.0 * (half_width + margin) {
            return Err(Error::InvalidInput(format!(
                "minimum width {} does not fit half width {half_width} plus margin {margin}",
                self.width_range[0]
            )));
        }
        // the inside border must stay short of the center of curvature
        if self.width_range[1] * self.curvature_range[1] >= 1.0 {
            return Err(Error::InvalidInput(
                "tightest corner radius is smaller than the track width".into(),
            ));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::InvalidInput("smoothing must be >= 0".into()));
        }
        Ok(())
    }
}

/// Attempts with a perturbed seed before giving up on a spec.
pub const MAX_ATTEMPTS: u64 = 10;

/// Layout draws tried per attempt before the attempt counts as failed.
const LAYOUT_DRAWS: usize = 400;

/// Integration resolution of the curvature profile (m).
const FINE_STEP: f64 = 0.25;

/// Spacing of emitted raw centerline rows, in fine steps.
const EMIT_EVERY: usize = 8;

/// Pairs of samples at least this far apart along the lap must not overlap laterally.
const MIN_ARC_SEPARATION: f64 = 150.0;

/// Extra clearance between the borders of neighbouring track parts (m).
const CLEARANCE: f64 = 5.0;

pub fn generate_track(spec: &TrackSpec) -> Result<TrackModel> {
    let raw = generate_centerline(spec)?;
    build_track(&raw, &TrackOptions::default())
}

/// Raw centerline rows of the circuit, roughly 2 m apart.
pub fn generate_centerline(spec: &TrackSpec) -> Result<Vec<RawCenterlinePoint>> {
    spec.validate(0.0, 0.0)?;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = spec
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some(raw) = (0..LAYOUT_DRAWS).find_map(|_| try_layout(spec, &mut rng)) else {
            debug!("spec seed {} attempt {attempt}: no closable layout", spec.seed);
            continue;
        };
        match build_track(&raw, &TrackOptions::default()) {
            Ok(track) if borders_clear(&track) => return Ok(raw),
            Ok(_) => debug!("spec seed {} attempt {attempt}: borders overlap", spec.seed),
            Err(e) => debug!("spec seed {} attempt {attempt}: {e}", spec.seed),
        }
    }
    Err(Error::InvalidInput(format!(
        "no valid circuit for seed {} after {MAX_ATTEMPTS} attempts",
        spec.seed
    )))
}

struct Layout {
    /// Signed corner curvatures.
    curvature: Vec<f64>,
    /// Corner lengths.
    corner_len: Vec<f64>,
    /// Straight lengths; straight `k` follows corner `k`.
    straight_len: Vec<f64>,
}

impl Layout {
    fn length(&self) -> f64 {
        self.corner_len.iter().sum::<f64>() + self.straight_len.iter().sum::<f64>()
    }

    /// Cell averages of the piecewise-constant curvature on `m` equal cells over the lap,
    /// plus the cell index at the middle of every straight. Averaging (rather than point
    /// sampling) keeps the profile continuous in the segment lengths.
    fn sample(&self, m: usize) -> (Vec<f64>, Vec<usize>) {
        let total = self.length();
        let ds = total / m as f64;
        let mut kappa = vec![0.0; m];
        let mut mids = Vec::with_capacity(self.curvature.len());
        let mut start = 0.0;
        for k in 0..self.curvature.len() {
            let end = start + self.corner_len[k];
            let first = (start / ds) as usize;
            let last = ((end / ds) as usize).min(m - 1);
            for (i, cell) in kappa.iter_mut().enumerate().take(last + 1).skip(first) {
                let lo = (i as f64 * ds).max(start);
                let hi = ((i + 1) as f64 * ds).min(end);
                if hi > lo {
                    *cell += self.curvature[k] * (hi - lo) / ds;
                }
            }
            let mid = end + 0.5 * self.straight_len[k];
            mids.push(((mid / ds) as usize).min(m - 1));
            start = end + self.straight_len[k];
        }
        (kappa, mids)
    }
}

fn draw_layout(spec: &TrackSpec, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let n = spec.corners;
    let [k_lo, k_hi] = spec.curvature_range;
    let [l_lo, l_hi] = spec.segment_length_range;
    let mut curvature = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    let mut straight_len = Vec::with_capacity(n);
    for _ in 0..n {
        let left = rng.random_bool(0.7);
        let k = rng.random_range(k_lo..=k_hi);
        curvature.push(if left { k } else { -k });
        angle.push(rng.random_range(PI / 9.0..=5.0 * PI / 6.0));
        straight_len.push(rng.random_range(l_lo..=l_hi));
    }
    let left: f64 = (0..n).filter(|&k| curvature[k] > 0.0).map(|k| angle[k]).sum();
    let right: f64 = (0..n).filter(|&k| curvature[k] < 0.0).map(|k| angle[k]).sum();
    let factor = (2.0 * PI + right) / left;
    if !(0.6..=1.6).contains(&factor) {
        return None;
    }
    let corner_len = (0..n)
        .map(|k| {
            let a = if curvature[k] > 0.0 { angle[k] * factor } else { angle[k] };
            a / curvature[k].abs()
        })
        .collect();
    Some(Layout {
        curvature,
        corner_len,
        straight_len,
    })
}

/// Integrates heading and position of a periodic curvature profile; returns the fine
/// points (without the closing duplicate), the gap `p_m - p_0` and the headings.
fn integrate(kappa: &[f64], ds: f64) -> (Vec<Vec2>, Vec2, Vec<f64>) {
    let m = kappa.len();
    let mut heading = Vec::with_capacity(m + 1);
    let mut theta = 0.0;
    heading.push(theta);
    for i in 0..m {
        theta += ds * kappa[i];
        heading.push(theta);
    }
    let mut points = Vec::with_capacity(m);
    let mut p = Vec2::zeros();
    for i in 0..m {
        points.push(p);
        let phi = 0.5 * (heading[i] + heading[i + 1]);
        p += ds * Vec2::new(phi.cos(), phi.sin());
    }
    heading.pop();
    (points, p, heading)
}

fn try_layout(spec: &TrackSpec, rng: &mut ChaCha8Rng) -> Option<Vec<RawCenterlinePoint>> {
    let mut layout = draw_layout(spec, rng)?;
    let min_straight = 0.5 * spec.segment_length_range[0];
    let mut fine = None;
    let m = ((layout.length() / FINE_STEP).round() as usize).next_multiple_of(EMIT_EVERY);
    for _ in 0..30 {
        let ds = layout.length() / m as f64;
        let (raw_kappa, mids) = layout.sample(m);
        let window = ((spec.smoothing / ds).round() as usize) | 1;
        let mut kappa = crate::geometry::smooth_periodic(&raw_kappa, window);
        // exact single revolution on the fine grid
        let turn: f64 = kappa.iter().sum::<f64>() * ds;
        for k in kappa.iter_mut() {
            *k *= 2.0 * PI / turn;
        }
        let (points, gap, heading) = integrate(&kappa, ds);
        if gap.norm() < 1e-9 {
            fine = Some((points, ds));
            break;
        }
        // minimum-norm straight-length change cancelling the gap
        let dirs: Vec<Vec2> = mids
            .iter()
            .map(|&i| Vec2::new(heading[i].cos(), heading[i].sin()))
            .collect();
        let mut gram = nalgebra::Matrix2::zeros();
        for u in &dirs {
            gram += u * u.transpose();
        }
        let lambda = gram.try_inverse()? * (-gap);
        for (len, u) in layout.straight_len.iter_mut().zip(&dirs) {
            *len += u.dot(&lambda);
        }
        if layout.straight_len.iter().any(|&l| l < min_straight) {
            return None;
        }
    }
    let (points, ds) = fine?;
    Some(emit(spec, rng, &points, ds))
}

/// Subsamples the fine points and attaches smoothly varying widths.
fn emit(
    spec: &TrackSpec,
    rng: &mut ChaCha8Rng,
    points: &[Vec2],
    ds: f64,
) -> Vec<RawCenterlinePoint> {
    let m = points.len();
    let total = m as f64 * ds;
    let [w_lo, w_hi] = spec.width_range;
    let mid = 0.5 * (w_lo + w_hi);
    let amp = 0.5 * (w_hi - w_lo);
    // a few low-order Fourier modes, normalized to stay inside the range
    let modes: Vec<(f64, f64, f64)> = (1..=3)
        .map(|k| {
            (
                k as f64,
                rng.random_range(-1.0..=1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let asym_phase = rng.random_range(0.0..2.0 * PI);
    let norm: f64 = modes.iter().map(|(_, a, _)| a.abs()).sum::<f64>().max(1.0);
    (0..m)
        .step_by(EMIT_EVERY)
        .map(|i| {
            let u = 2.0 * PI * i as f64 * ds / total;
            let wave: f64 = modes.iter().map(|(k, a, ph)| a * (k * u + ph).sin()).sum();
            let width = mid + amp * wave / norm;
            let split = 0.5 + 0.05 * (u + asym_phase).sin();
            RawCenterlinePoint {
                x: points[i].x,
                y: points[i].y,
                w_right: width * (1.0 - split),
                w_left: width * split,
            }
        })
        .collect()
}

/// True when no two samples far apart along the lap come closer than their combined
/// widths plus clearance.
fn borders_clear(track: &TrackModel) -> bool {
    let n = track.len();
    let stride = 5;
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let sep = (MIN_ARC_SEPARATION / track.step()).ceil() as usize;
    let pts = track.points();
    let reach: Vec<f64> = (0..n)
        .map(|i| track.border_left()[i].max(track.border_right()[i]))
        .collect();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let gap = (j - i).min(n - (j - i));
            if gap < sep {
                continue;
            }
            if (pts[i] - pts[j]).norm() < reach[i] + reach[j] + CLEARANCE {
                return false;
            }
        }
    }
    true
}
