//! Centerline-aligned input windows and their feature normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};

/// Per-sample raw geometry of a track: curvature and border distances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFeatures {
    pub kappa: Vec<f64>,
    pub border_left: Vec<f64>,
    pub border_right: Vec<f64>,
}

impl TrackFeatures {
    pub fn of(track: &TrackModel) -> Self {
        Self {
            kappa: track.curvature().to_vec(),
            border_left: track.border_left().to_vec(),
            border_right: track.border_right().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    /// The same circuit seen in a mirror: curvature flips sign and the borders swap.
    /// Paired with negated offsets this is an exact symmetry of the problem.
    pub fn mirrored(&self) -> Self {
        Self {
            kappa: self.kappa.iter().map(|k| -k).collect(),
            border_left: self.border_right.clone(),
            border_right: self.border_left.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: if var > 0.0 { var.sqrt() } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Normalization of the input channels. Curvature and borders are z-scored; offsets are
/// only scaled (no shift) so that a zero output means the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub kappa: ChannelStats,
    pub border_left: ChannelStats,
    pub border_right: ChannelStats,
    pub offset_scale: f64,
}

impl FeatureStats {
    pub fn identity() -> Self {
        let unit = ChannelStats { mean: 0.0, std: 1.0 };
        Self {
            kappa: unit,
            border_left: unit,
            border_right: unit,
            offset_scale: 1.0,
        }
    }

    /// Statistics over every sample of the given (training) tracks.
    pub fn fit(tracks: &[(TrackFeatures, Vec<f64>)]) -> Self {
        let kappa = ChannelStats::of(tracks.iter().flat_map(|(f, _)| f.kappa.iter().copied()));
        let border_left = ChannelStats::of(tracks.iter().flat_map(|(f, _)| f.border_left.iter().copied()));
        let border_right = ChannelStats::of(tracks.iter().flat_map(|(f, _)| f.border_right.iter().copied()));
        let count = tracks.iter().map(|(_, d)| d.len()).sum::<usize>().max(1) as f64;
        let rms = (tracks.iter().flat_map(|(_, d)| d.iter()).map(|d| d * d).sum::<f64>() / count).sqrt();
        Self {
            kappa,
            border_left,
            border_right,
            offset_scale: if rms > 0.0 { rms } else { 1.0 },
        }
    }

    fn geometry(&self, f: &TrackFeatures, i: usize) -> [f64; 3] {
        [
            self.kappa.apply(f.kappa[i]),
            self.border_left.apply(f.border_left[i]),
            self.border_right.apply(f.border_right[i]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowShape {
    pub history: usize,
    pub future: usize,
    pub target: usize,
}

impl WindowShape {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.future == 0 || self.target == 0 || self.target > self.future {
            return Err(Error::InvalidInput(format!(
                "window sizes need H, F, T >= 1 and T <= F, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Normalized network input for the target samples starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub start: usize,
    /// `H x [kappa, b_left, b_right, d]`.
    pub history: Vec<[f64; 4]>,
    /// `F x [kappa, b_left, b_right]`.
    pub future: Vec<[f64; 3]>,
    /// Ground-truth offsets (m) of the first `T` future samples; empty at inference.
    pub target: Vec<f64>,
}

/// Builds the window whose future starts at sample `start`; indices wrap around the lap.
/// `offsets` supplies the history raceline channel (m).
pub fn window_at(
    features: &TrackFeatures,
    offsets: &[f64],
    stats: &FeatureStats,
    shape: WindowShape,
    start: usize,
) -> WindowSample {
    let n = features.len();
    let history = (0..shape.history)
        .map(|j| {
            let i = (start + n * (shape.history / n + 1) - shape.history + j) % n;
            let [k, l, r] = stats.geometry(features, i);
            [k, l, r, offsets[i] / stats.offset_scale]
        })
        .collect();
    let future = (0..shape.future)
        .map(|j| stats.geometry(features, (start + j) % n))
        .collect();
    WindowSample {
        start,
        history,
        future,
        target: Vec::new(),
    }
}

/// One window per `stride` samples around the closed lap, with targets from `expert`.
pub fn make_windows(
    features: &TrackFeatures,
    expert: &[f64],
    stats: &FeatureStats,
    shape: WindowShape,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    shape.validate()?;
    let n = features.len();
    if expert.len() != n {
        return Err(Error::CountMismatch {
            expected: n,
            actual: expert.len(),
        });
    }
    if n < shape.history + shape.future {
        return Err(Error::InvalidInput(format!(
            "track has {n} samples, windows need at least {}",
            shape.history + shape.future
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidInput("window stride must be >= 1".into()));
    }
    Ok((0..n.div_ceil(stride))
        .map(|k| {
            let start = k * stride;
            let mut w = window_at(features, expert, stats, shape, start);
            w.target = (0..shape.target).map(|j| expert[(start + j) % n]).collect();
            w
        })
        .collect())
}

/// Windows of a track model and its expert line.
pub fn track_windows(
    track: &TrackModel,
    expert: &RacelineOffset,
    stats: &FeatureStats,
    shape: WindowShape,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    expert.check_matches(track)?;
    make_windows(&TrackFeatures::of(track), &expert.offsets, stats, shape, stride)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> (TrackFeatures, Vec<f64>) {
        let f = TrackFeatures {
            kappa: (0..n).map(|i| (i as f64 * 0.1).sin() * 0.01).collect(),
            border_left: (0..n).map(|i| 5.0 + (i % 7) as f64 * 0.1).collect(),
            border_right: vec![6.0; n],
        };
        let d = (0..n).map(|i| i as f64).collect();
        (f, d)
    }

    #[test]
    fn window_count_is_ceiling() {
        let (f, d) = ramp(103);
        let shape = WindowShape { history: 10, future: 20, target: 5 };
        let w = make_windows(&f, &d, &FeatureStats::identity(), shape, 5).unwrap();
        assert_eq!(w.len(), 21);
        assert!(w.iter().all(|s| s.history.len() == 10 && s.future.len() == 20 && s.target.len() == 5));
    }

    #[test]
    fn windows_wrap_across_the_seam() {
        let (f, d) = ramp(50);
        let shape = WindowShape { history: 4, future: 6, target: 3 };
        let w = window_at(&f, &d, &FeatureStats::identity(), shape, 0);
        let hist_d: Vec<f64> = w.history.iter().map(|h| h[3]).collect();
        assert_eq!(hist_d, vec![46.0, 47.0, 48.0, 49.0]);
        let w = make_windows(&f, &d, &FeatureStats::identity(), shape, 3).unwrap();
        let last = w.last().unwrap();
        assert_eq!(last.start, 48);
        assert_eq!(last.target, vec![48.0, 49.0, 0.0]);
        assert_eq!(last.future[2][0], f.kappa[0]);
    }

    #[test]
    fn normalized_training_curvature_is_standard() {
        let tracks: Vec<_> = [40, 77].iter().map(|&n| ramp(n)).collect();
        let stats = FeatureStats::fit(&tracks);
        let all: Vec<f64> = tracks
            .iter()
            .flat_map(|(f, _)| f.kappa.iter().map(|&k| stats.kappa.apply(k)))
            .collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-3, "{mean} {std}");
    }

    #[test]
    fn too_short_tracks_are_refused() {
        let (f, d) = ramp(20);
        let shape = WindowShape { history: 10, future: 20, target: 5 };
        assert!(make_windows(&f, &d, &FeatureStats::identity(), shape, 5).is_err());
    }
}
