//! Noisy, misaligned GPS-like laps sampled from a known expert line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::{AlignmentTransform, LapFlags, TelemetryLap};
use crate::error::{Error, Result};
use crate::geometry::{frenet_to_cartesian, FrenetPose, RacelineOffset, TrackModel, Vec2};
use crate::solver::path::path_geometry;
use crate::spline::PeriodicSpline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    pub seed: u64,
    pub laps: usize,
    /// Standard deviation of the positional noise per axis (m).
    pub noise: f64,
    pub rate_hz: f64,
    /// Probability that a lap is wet, under safety car, or in traffic.
    pub wet_ratio: f64,
    pub safety_car_ratio: f64,
    pub traffic_ratio: f64,
    /// Relative lap-to-lap pace variation (uniform, +-).
    pub pace_jitter: f64,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            laps: 20,
            noise: 0.2,
            rate_hz: 3.0,
            wet_ratio: 0.1,
            safety_car_ratio: 0.05,
            traffic_ratio: 0.1,
            pace_jitter: 0.01,
        }
    }
}

/// Samples `config.laps` laps of the expert at its speed profile's timing. Positions get
/// Gaussian noise in the track frame and are then mapped by `transform.inverse()`, so
/// registering them recovers `transform`.
pub fn simulate_telemetry(
    track: &TrackModel,
    expert: &RacelineOffset,
    speed: &[f64],
    transform: &AlignmentTransform,
    config: &TelemetryConfig,
) -> Result<Vec<TelemetryLap>> {
    expert.check_matches(track)?;
    if speed.len() != track.len() {
        return Err(Error::CountMismatch {
            expected: track.len(),
            actual: speed.len(),
        });
    }
    if config.laps == 0 || !(config.rate_hz > 0.0) || !(config.noise >= 0.0) {
        return Err(Error::InvalidInput(
            "telemetry needs laps >= 1, rate > 0 and noise >= 0".into(),
        ));
    }
    if speed.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("expert speeds must be positive".into()));
    }
    let n = track.len();
    let geo = path_geometry(track, &expert.offsets);
    // node times along the path, trapezoidal in inverse speed
    let mut node_time = Vec::with_capacity(n + 1);
    node_time.push(0.0);
    for i in 0..n {
        let dt = 2.0 * geo.seg_len[i] / (speed[i] + speed[(i + 1) % n]);
        node_time.push(node_time[i] + dt);
    }
    let lap_time = node_time[n];
    let offset = PeriodicSpline::uniform(expert.offsets.clone(), track.step())?;
    let inverse = transform.inverse();
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dt = 1.0 / config.rate_hz;

    let mut laps = Vec::with_capacity(config.laps);
    for _ in 0..config.laps {
        let pace = 1.0 + config.pace_jitter * rng.random_range(-1.0..=1.0);
        let phase = rng.random_range(0.0..dt);
        let flags = LapFlags {
            wet: rng.random_bool(config.wet_ratio),
            safety_car: rng.random_bool(config.safety_car_ratio),
            traffic: rng.random_bool(config.traffic_ratio),
        };
        let mut points = Vec::new();
        let mut seg = 0usize;
        let mut t = phase;
        while t < lap_time {
            while node_time[seg + 1] <= t {
                seg += 1;
            }
            let u = (t - node_time[seg]) / (node_time[seg + 1] - node_time[seg]);
            let s = track.wrap_s((seg as f64 + u) * track.step());
            let p = frenet_to_cartesian(track, FrenetPose::new(s, offset.eval(s)));
            let noisy = p + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let q = inverse.apply(noisy);
            points.push([q.x, q.y, t * pace]);
            t += dt;
        }
        laps.push(TelemetryLap {
            lap_time: lap_time * pace,
            flags,
            points,
        });
    }
    Ok(laps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{mean_trajectory, AlignConfig};
    use crate::geometry::{build_track, circle_centerline, TrackOptions};
    use crate::solver::{velocity_profile_fb, VehicleParams};

    fn circle_case() -> (TrackModel, RacelineOffset, Vec<f64>) {
        let track = build_track(&circle_centerline(50.0, 5.0, 5.0, 400, false), &TrackOptions::default())
            .unwrap();
        let expert = RacelineOffset::new(
            &track,
            (0..track.len()).map(|i| 2.0 * (3.0 * track.s_at(i) / 50.0).sin()).collect(),
        )
        .unwrap();
        let params = VehicleParams { mu: 1.0, ..VehicleParams::default() };
        let speed = velocity_profile_fb(&track, &expert, &params).unwrap().speed;
        (track, expert, speed)
    }

    #[test]
    fn rate_arithmetic() {
        let (track, _, _) = circle_case();
        let zero = RacelineOffset::zeros(&track);
        // constant 22.4 m/s on a ~314 m lap: about 14 s, so about 42 samples at 3 Hz
        let speed = vec![22.4; track.len()];
        let config = TelemetryConfig { laps: 3, ..TelemetryConfig::default() };
        let laps = simulate_telemetry(&track, &zero, &speed, &AlignmentTransform::identity(), &config).unwrap();
        let lap_time = track.length() / 22.4;
        for lap in &laps {
            let expected = lap_time * 3.0;
            assert!((lap.points.len() as f64 - expected).abs() <= 1.0, "{}", lap.points.len());
            assert!(lap.validate().is_ok());
        }
    }

    #[test]
    fn noiseless_aligned_laps_average_to_the_expert() {
        let (track, expert, speed) = circle_case();
        let config = TelemetryConfig { noise: 0.0, rate_hz: 20.0, laps: 4, ..TelemetryConfig::default() };
        let laps = simulate_telemetry(&track, &expert, &speed, &AlignmentTransform::identity(), &config).unwrap();
        let mean = mean_trajectory(&laps, &track, &AlignmentTransform::identity(), &AlignConfig::default()).unwrap();
        let rmse = (mean
            .offsets
            .iter()
            .zip(&expert.offsets)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / track.len() as f64)
            .sqrt();
        assert!(rmse < 1e-3, "{rmse}");
    }

    #[test]
    fn points_are_mapped_by_the_inverse_transform() {
        let (track, expert, speed) = circle_case();
        let transform = AlignmentTransform { theta: 0.4, t: [10.0, -3.0], sigma: 1.05, loss: 0.0 };
        let config = TelemetryConfig { noise: 0.0, laps: 1, seed: 5, ..TelemetryConfig::default() };
        let plain = simulate_telemetry(&track, &expert, &speed, &AlignmentTransform::identity(), &config).unwrap();
        let moved = simulate_telemetry(&track, &expert, &speed, &transform, &config).unwrap();
        for (a, b) in plain[0].points.iter().zip(&moved[0].points) {
            let back = transform.apply(Vec2::new(b[0], b[1]));
            assert!((back - Vec2::new(a[0], a[1])).norm() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_laps() {
        let (track, expert, speed) = circle_case();
        let config = TelemetryConfig { laps: 5, seed: 9, ..TelemetryConfig::default() };
        let id = AlignmentTransform::identity();
        let a = simulate_telemetry(&track, &expert, &speed, &id, &config).unwrap();
        let b = simulate_telemetry(&track, &expert, &speed, &id, &config).unwrap();
        assert_eq!(a, b);
    }
}
