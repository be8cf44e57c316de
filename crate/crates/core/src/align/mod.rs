//! Expert raceline reconstruction from noisy, misaligned multi-lap telemetry.

pub mod io;
pub mod register;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_frenet, RacelineOffset, TrackModel, Vec2};
use crate::spline::PeriodicSpline;

pub use register::{polish, register_similarity, register_to_index, NearestIndex, RegistrationConfig};

/// Similarity transform `p -> sigma R(theta) p + t` and the alignment loss it achieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub theta: f64,
    pub t: [f64; 2],
    pub sigma: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LapFlags {
    pub wet: bool,
    pub safety_car: bool,
    pub traffic: bool,
}

impl LapFlags {
    pub fn any(&self) -> bool {
        self.wet || self.safety_car || self.traffic
    }
}

/// One lap of planar position samples `[x, y, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryLap {
    pub lap_time: f64,
    #[serde(default)]
    pub flags: LapFlags,
    pub points: Vec<[f64; 3]>,
}

impl TelemetryLap {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 10 {
            return Err(Error::InvalidInput(format!(
                "lap has {} points, need >= 10",
                self.points.len()
            )));
        }
        if let Some(k) = self.points.windows(2).position(|w| !(w[1][2] > w[0][2])) {
            return Err(Error::InvalidInput(format!(
                "timestamps not strictly increasing at sample {}",
                k + 1
            )));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) || !self.lap_time.is_finite() {
            return Err(Error::InvalidInput("non-finite telemetry value".into()));
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Maximum number of clean laps kept.
    pub lap_budget: usize,
    pub dedupe_radius: f64,
    /// Fraction of the track a lap must cover to enter the mean.
    pub min_coverage: f64,
    /// Gaps between projected samples longer than this count as uncovered (m).
    pub max_gap: f64,
    /// Clearance to the borders of the reconstructed line (m).
    pub clamp_margin: f64,
    pub registration: RegistrationConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            lap_budget: 15,
            dedupe_radius: 0.5,
            min_coverage: 0.9,
            max_gap: 60.0,
            clamp_margin: 0.1,
            registration: RegistrationConfig::default(),
        }
    }
}

/// Keeps unflagged laps, fastest first, at most `budget` of them.
pub fn filter_laps(laps: &[TelemetryLap], budget: usize) -> Result<Vec<TelemetryLap>> {
    let mut clean: Vec<TelemetryLap> = laps.iter().filter(|l| !l.flags.any()).cloned().collect();
    if clean.is_empty() || budget == 0 {
        return Err(Error::NoCleanLaps);
    }
    // stable sort: equal lap times keep file order
    clean.sort_by(|a, b| a.lap_time.total_cmp(&b.lap_time));
    clean.truncate(budget);
    Ok(clean)
}

/// Greedy forward scan that drops points within `radius` of the last kept point.
pub fn dedupe_points(points: &[Vec2], radius: f64) -> Vec<Vec2> {
    dedupe_indices(points, radius).into_iter().map(|i| points[i]).collect()
}

fn dedupe_indices(points: &[Vec2], radius: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        match kept.last() {
            Some(&j) if (p - points[j]).norm() <= radius => {}
            _ => kept.push(i),
        }
    }
    kept
}

/// Same lap with near-duplicate position samples removed.
pub fn dedupe_lap(lap: &TelemetryLap, radius: f64) -> TelemetryLap {
    let keep = dedupe_indices(&lap.positions(), radius);
    TelemetryLap {
        points: keep.into_iter().map(|i| lap.points[i]).collect(),
        ..lap.clone()
    }
}

/// Lateral offset of one transformed lap on the track grid, or `None` when the lap covers
/// too little of the track.
fn lap_offsets(
    lap: &TelemetryLap,
    track: &TrackModel,
    transform: &AlignmentTransform,
    config: &AlignConfig,
) -> Result<Option<Vec<f64>>> {
    let length = track.length();
    let mut samples: Vec<(f64, f64)> = lap
        .positions()
        .into_iter()
        .filter_map(|p| cartesian_to_frenet(track, transform.apply(p)).ok())
        .map(|pose| (pose.s, pose.d))
        .collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge samples that project to (almost) the same arc length
    let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(samples.len());
    for (s, d) in samples {
        match merged.last_mut() {
            Some(last) if s - last.0 / last.2 as f64 <= 1e-6 => {
                last.0 += s;
                last.1 += d;
                last.2 += 1;
            }
            _ => merged.push((s, d, 1)),
        }
    }
    let knots: Vec<f64> = merged.iter().map(|m| m.0 / m.2 as f64).collect();
    let values: Vec<f64> = merged.iter().map(|m| m.1 / m.2 as f64).collect();
    if knots.len() < 3 {
        return Ok(None);
    }
    let n = knots.len();
    let uncovered: f64 = (0..n)
        .map(|i| {
            let gap = if i + 1 < n { knots[i + 1] - knots[i] } else { knots[0] + length - knots[n - 1] };
            if gap > config.max_gap { gap } else { 0.0 }
        })
        .sum();
    let coverage = 1.0 - uncovered / length;
    if coverage < config.min_coverage {
        warn!("lap with time {:.3} s covers {:.1}% of the track, excluded", lap.lap_time, 100.0 * coverage);
        return Ok(None);
    }
    let spline = PeriodicSpline::new(knots, values, length)?;
    Ok(Some((0..track.len()).map(|i| spline.eval(track.s_at(i))).collect()))
}

/// Mean lateral offset over all laps after mapping them into the track frame.
pub fn mean_trajectory(
    laps: &[TelemetryLap],
    track: &TrackModel,
    transform: &AlignmentTransform,
    config: &AlignConfig,
) -> Result<RacelineOffset> {
    if laps.is_empty() {
        return Err(Error::NoCleanLaps);
    }
    let mut sum = vec![0.0; track.len()];
    let mut used = 0usize;
    for lap in laps {
        if let Some(d) = lap_offsets(lap, track, transform, config)? {
            sum.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoCleanLaps);
    }
    RacelineOffset::new(track, sum.into_iter().map(|v| v / used as f64).collect())
}

/// Dense reference polyline of the centerline used as registration target.
pub fn centerline_reference(track: &TrackModel, spacing: f64) -> Vec<Vec2> {
    let count = (track.length() / spacing).ceil().max(10.0) as usize;
    let ds = track.length() / count as f64;
    (0..count).map(|i| track.position_at(i as f64 * ds)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub line: RacelineOffset,
    pub transform: AlignmentTransform,
    pub laps_used: usize,
}

/// Filter, dedupe, register against the centerline, average, and clamp into the track.
pub fn reconstruct_expert(
    laps: &[TelemetryLap],
    track: &TrackModel,
    config: &AlignConfig,
) -> Result<Reconstruction> {
    for lap in laps {
        lap.validate()?;
    }
    let clean: Vec<TelemetryLap> = filter_laps(laps, config.lap_budget)?
        .iter()
        .map(|l| dedupe_lap(l, config.dedupe_radius))
        .collect();
    let pooled: Vec<Vec2> = clean.iter().flat_map(|l| l.positions()).collect();
    let reference = NearestIndex::closed_polyline(&centerline_reference(track, 0.5))?;
    let transform = register_to_index(&pooled, &reference, &config.registration)?;
    let line = mean_trajectory(&clean, track, &transform, config)?;
    Ok(Reconstruction {
        line: line.clamped(track, config.clamp_margin),
        transform,
        laps_used: clean.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, frenet_to_cartesian, FrenetPose, TrackOptions};

    fn lap(time: f64, flags: LapFlags) -> TelemetryLap {
        TelemetryLap {
            lap_time: time,
            flags,
            points: (0..10).map(|i| [i as f64, 0.0, i as f64]).collect(),
        }
    }

    fn oval() -> TrackModel {
        let raw: Vec<_> = (0..400)
            .map(|i| {
                let u = 2.0 * std::f64::consts::PI * i as f64 / 400.0;
                crate::geometry::RawCenterlinePoint {
                    x: 300.0 * u.cos() + 40.0 * (2.0 * u).cos(),
                    y: 150.0 * u.sin() + 20.0 * (3.0 * u).sin(),
                    w_right: 6.0,
                    w_left: 6.0,
                }
            })
            .collect();
        build_track(&raw, &TrackOptions::default()).unwrap()
    }

    fn lap_along(track: &TrackModel, offset: impl Fn(f64) -> f64, step: f64) -> TelemetryLap {
        let count = (track.length() / step) as usize;
        let points = (0..count)
            .map(|k| {
                let s = k as f64 * step;
                let p = frenet_to_cartesian(track, FrenetPose::new(s, offset(s)));
                [p.x, p.y, k as f64 * 0.3]
            })
            .collect();
        TelemetryLap {
            lap_time: count as f64 * 0.3,
            flags: LapFlags::default(),
            points,
        }
    }

    #[test]
    fn filter_keeps_fastest_clean_laps() {
        let mut laps: Vec<_> = (0..20).map(|i| lap(90.0 - i as f64, LapFlags::default())).collect();
        for i in [0, 7, 19] {
            laps[i].flags.wet = true;
        }
        let kept = filter_laps(&laps, 15).unwrap();
        assert_eq!(kept.len(), 15);
        assert!(kept.iter().all(|l| !l.flags.any()));
        assert!(kept.windows(2).all(|w| w[0].lap_time <= w[1].lap_time));
        // clean times are 72..=89 without 83; the two slowest (88, 89) are dropped
        assert_eq!(kept.first().unwrap().lap_time, 72.0);
        assert_eq!(kept.last().unwrap().lap_time, 87.0);
        let few: Vec<_> = (0..5).map(|i| lap(80.0 + i as f64, LapFlags::default())).collect();
        assert_eq!(filter_laps(&few, 15).unwrap().len(), 5);
        let all_bad: Vec<_> = (0..3)
            .map(|_| lap(80.0, LapFlags { safety_car: true, ..LapFlags::default() }))
            .collect();
        assert!(matches!(filter_laps(&all_bad, 15), Err(Error::NoCleanLaps)));
    }

    #[test]
    fn dedupe_cases() {
        let same = vec![Vec2::new(1.0, 2.0); 7];
        assert_eq!(dedupe_points(&same, 0.5).len(), 1);
        let spaced: Vec<_> = (0..10).map(|i| Vec2::new(i as f64, 0.0)).collect();
        assert_eq!(dedupe_points(&spaced, 0.5), spaced);
        let jitter: Vec<_> = (0..10)
            .map(|i| Vec2::new((i / 2) as f64 + 0.1 * (i % 2) as f64, 0.0))
            .collect();
        let kept = dedupe_points(&jitter, 0.5);
        let expected: Vec<_> = jitter.iter().step_by(2).copied().collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn validate_rejects_bad_laps() {
        let mut l = lap(80.0, LapFlags::default());
        assert!(l.validate().is_ok());
        l.points[4][2] = l.points[3][2];
        assert!(l.validate().is_err());
        let short = TelemetryLap { points: vec![[0.0; 3]; 9], ..lap(80.0, LapFlags::default()) };
        assert!(short.validate().is_err());
    }

    #[test]
    fn mean_of_one_and_of_symmetric_pair() {
        let track = oval();
        let truth = |s: f64| 3.0 * (2.0 * std::f64::consts::PI * s / track.length() * 4.0).sin();
        let id = AlignmentTransform::identity();
        let config = AlignConfig::default();
        let one = mean_trajectory(&[lap_along(&track, truth, 5.0)], &track, &id, &config).unwrap();
        for (i, d) in one.offsets.iter().enumerate() {
            assert!((d - truth(track.s_at(i))).abs() < 1e-3, "{i}: {d}");
        }
        let pair = [
            lap_along(&track, |s| truth(s) + 0.3, 5.0),
            lap_along(&track, |s| truth(s) - 0.3, 5.0),
        ];
        let mean = mean_trajectory(&pair, &track, &id, &config).unwrap();
        for (a, b) in mean.offsets.iter().zip(&one.offsets) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn mean_commutes_with_constant_shift() {
        let track = oval();
        let id = AlignmentTransform::identity();
        let config = AlignConfig::default();
        let base = |s: f64| 2.0 * (s / 90.0).cos();
        let laps = [lap_along(&track, base, 7.0), lap_along(&track, |s| base(s + 3.0), 6.0)];
        let shifted = [
            lap_along(&track, |s| base(s) + 0.7, 7.0),
            lap_along(&track, |s| base(s + 3.0) + 0.7, 6.0),
        ];
        let a = mean_trajectory(&laps, &track, &id, &config).unwrap();
        let b = mean_trajectory(&shifted, &track, &id, &config).unwrap();
        for (x, y) in a.offsets.iter().zip(&b.offsets) {
            assert!((y - x - 0.7).abs() < 1e-6, "{x} {y}");
        }
    }

    #[test]
    fn partial_laps_are_excluded() {
        let track = oval();
        let id = AlignmentTransform::identity();
        let mut partial = lap_along(&track, |_| 1.0, 5.0);
        let keep = partial.points.len() / 2;
        partial.points.truncate(keep);
        let config = AlignConfig::default();
        assert!(matches!(
            mean_trajectory(std::slice::from_ref(&partial), &track, &id, &config),
            Err(Error::NoCleanLaps)
        ));
        let full = lap_along(&track, |_| -1.0, 5.0);
        let mean = mean_trajectory(&[partial, full], &track, &id, &config).unwrap();
        assert!(mean.offsets.iter().all(|d| (d + 1.0).abs() < 1e-6));
    }

    #[test]
    fn aligned_laps_reconstruct_like_the_plain_mean() {
        let track = oval();
        // mostly on the reference line, so the alignment loss is minimal at the identity
        let line = |s: f64| if (300.0..360.0).contains(&s) { 2.0 * ((s - 300.0) / 60.0 * std::f64::consts::PI).sin() } else { 0.0 };
        let laps: Vec<_> = (0..3).map(|k| lap_along(&track, line, 4.0 + k as f64)).collect();
        let config = AlignConfig::default();
        let direct = mean_trajectory(&laps, &track, &AlignmentTransform::identity(), &config).unwrap();
        let out = reconstruct_expert(&laps, &track, &config).unwrap();
        for (a, b) in out.line.offsets.iter().zip(&direct.offsets) {
            assert!((a - b).abs() < 1e-3, "{a} {b} {:?}", out.transform);
        }
    }

    #[test]
    fn reconstruction_clamps_into_track() {
        let track = oval();
        // the line leaves the track by 0.5 m on the left in one region
        let bulge = |s: f64| if (100.0..140.0).contains(&s) { 6.5 } else { 0.0 };
        let laps: Vec<_> = (0..3).map(|_| lap_along(&track, bulge, 2.0)).collect();
        let out = reconstruct_expert(&laps, &track, &AlignConfig::default()).unwrap();
        let max = out.line.offsets.iter().fold(f64::MIN, |a, &b| a.max(b));
        assert!((max - 5.9).abs() < 1e-9, "{max}");
        for (i, d) in out.line.offsets.iter().enumerate() {
            assert!(*d <= track.border_left()[i] - 0.1 + 1e-12);
            assert!(*d >= -track.border_right()[i] + 0.1 - 1e-12);
        }
    }
}
