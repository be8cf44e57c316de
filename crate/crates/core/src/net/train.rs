//! Supervised training on expert lines with Adam, mirror augmentation and a best
//! validation checkpoint.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{hybrid_loss, hybrid_loss_grad};
use super::model::{backward, forward, predict_windows, BatchInput, Descriptor, Mode, NetWeights};
use super::infer::rollout;
use super::windows::{make_windows, window_at, FeatureStats, TrackFeatures, WindowSample, WindowShape};
use crate::par;
use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub descriptor: Descriptor,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Samples between consecutive training windows.
    pub stride: usize,
    /// Share of each track's windows held out for validation.
    pub val_fraction: f64,
    /// Also train on the mirror image of every track.
    pub mirror: bool,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Std (m) of the random offset and tilt added to the history raceline channel of
    /// every training window, so the model learns to steer back toward the expert
    /// instead of extrapolating its own errors at inference. 0 disables.
    pub history_noise: f64,
    /// First epoch that also trains on the model's own full-lap predictions as history;
    /// `None` disables.
    pub rollout_from: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            descriptor: Descriptor::default(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            stride: 5,
            val_fraction: 0.1,
            mirror: true,
            grad_clip: 5.0,
            history_noise: 1.0,
            rollout_from: Some(2),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return Err(Error::InvalidInput("epochs, batch_size and stride must be >= 1".into()));
        }
        if !(self.history_noise >= 0.0) {
            return Err(Error::InvalidInput("history_noise must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be > 0 and val_fraction in [0, 1), got {} and {}",
                self.learning_rate, self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation weights, rounded to storage precision.
    pub weights: NetWeights,
    pub curves: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Epoch at which training went non-finite, if it did.
    pub diverged_at: Option<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean loss of `weights` over `windows` in inference mode.
pub fn evaluate(weights: &NetWeights, windows: &[WindowSample]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(64) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        for (pred, w) in predict_windows(weights, &refs)?.iter().zip(chunk) {
            total += hybrid_loss(pred, &w.target);
        }
    }
    Ok(total / windows.len() as f64)
}

/// Loss and accumulated gradient of one batch in training mode; updates BN running stats.
fn batch_step(
    weights: &NetWeights,
    running: &mut [f64],
    batch: &[&WindowSample],
    grad: &mut [f64],
) -> Result<f64> {
    let input = BatchInput::from_samples(&weights.descriptor, batch)?;
    let (y, tape) = forward(weights, &input, Mode::Train { running: Some(running) });
    let t = weights.descriptor.target_len;
    let nb = batch.len() as f64;
    let mut dy = vec![0.0; y.len()];
    let mut loss = 0.0;
    for (i, w) in batch.iter().enumerate() {
        let p = &y[i * t..(i + 1) * t];
        loss += hybrid_loss(p, &w.target);
        for (j, g) in hybrid_loss_grad(p, &w.target).into_iter().enumerate() {
            dy[i * t + j] = g / nb;
        }
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    backward(weights, &tape.expect("training tape"), &dy, grad);
    Ok(loss / nb)
}

/// Copy of `w` with `a + b (j - H + 1) / H` meters added to its history offsets.
fn perturb_history(w: &WindowSample, sigma: f64, scale: f64, rng: &mut ChaCha8Rng) -> WindowSample {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let (a, b) = (normal.sample(rng), normal.sample(rng));
    let h = w.history.len() as f64;
    let mut out = w.clone();
    for (j, row) in out.history.iter_mut().enumerate() {
        row[3] += (a + b * (j as f64 - h + 1.0) / h) / scale;
    }
    out
}

/// One training circuit (or its mirror image) with its window starts.
struct TrainTrack {
    features: TrackFeatures,
    expert: Vec<f64>,
    train_starts: Vec<usize>,
    val_starts: Vec<usize>,
}

impl TrainTrack {
    /// Windows at `starts` whose history channel is read from `history`.
    fn windows(&self, history: &[f64], starts: &[usize], stats: &FeatureStats, shape: WindowShape) -> Vec<WindowSample> {
        let n = self.expert.len();
        starts
            .iter()
            .map(|&start| {
                let mut w = window_at(&self.features, history, stats, shape, start);
                w.target = (0..shape.target).map(|j| self.expert[(start + j) % n]).collect();
                w
            })
            .collect()
    }
}

/// Trains a model on `(track, expert line)` pairs. Deterministic for a fixed config.
///
/// Each track keeps a contiguous arc of `val_fraction` of its windows for validation (its
/// mirror image shares the arc). From epoch `rollout_from` on, every epoch also trains on
/// windows whose history is the current model's own full-lap prediction, the situation it
/// faces at inference.
pub fn train(data: &[(TrackModel, RacelineOffset)], config: &TrainConfig, split_id: &str) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no training tracks".into()));
    }
    let shape = config.descriptor.window();
    let mut pairs: Vec<(TrackFeatures, Vec<f64>)> = Vec::new();
    for (track, expert) in data {
        expert.check_matches(track)?;
        let f = TrackFeatures::of(track);
        // validates the sizes
        make_windows(&f, &expert.offsets, &FeatureStats::identity(), shape, config.stride)?;
        if config.mirror {
            pairs.push((f.mirrored(), expert.offsets.iter().map(|d| -d).collect()));
        }
        pairs.push((f, expert.offsets.clone()));
    }
    let stats = FeatureStats::fit(&pairs);
    let group = if config.mirror { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracks = Vec::new();
    for chunk in pairs.chunks(group) {
        let n = chunk[0].1.len();
        let count = n.div_ceil(config.stride);
        let k = ((count as f64) * config.val_fraction).round() as usize;
        let first = rng.random_range(0..count);
        let (val, train): (Vec<usize>, Vec<usize>) = (0..count).partition(|&i| (i + count - first) % count < k);
        for (features, expert) in chunk {
            tracks.push(TrainTrack {
                features: features.clone(),
                expert: expert.clone(),
                train_starts: train.iter().map(|i| i * config.stride).collect(),
                val_starts: val.iter().map(|i| i * config.stride).collect(),
            });
        }
    }
    let base: Vec<WindowSample> = tracks
        .iter()
        .flat_map(|t| t.windows(&t.expert, &t.train_starts, &stats, shape))
        .collect();
    let val_set: Vec<WindowSample> = tracks
        .iter()
        .flat_map(|t| t.windows(&t.expert, &t.val_starts, &stats, shape))
        .collect();
    log::info!("training on {} windows, validating on {}", base.len(), val_set.len());

    let mut weights = NetWeights::init(&config.descriptor, stats, config.seed)?;
    weights.meta.split_id = split_id.to_string();
    let mut running = std::mem::take(&mut weights.buffers);
    let mut adam = Adam::new(weights.params.len());
    let mut grad = vec![0.0; weights.params.len()];
    let mut curves = Vec::new();
    let mut best: Option<(f64, NetWeights)> = None;
    let mut diverged_at = None;
    let mut snapshot: Option<NetWeights> = None;

    for epoch in 0..config.epochs {
        let mut extra = Vec::new();
        if let (Some(from), Some(current)) = (config.rollout_from, &snapshot) {
            if epoch >= from {
                let rolled = par::map(&tracks, |t| rollout(current, &t.features));
                for (t, history) in tracks.iter().zip(rolled) {
                    extra.extend(t.windows(&history?, &t.train_starts, &stats, shape));
                }
            }
        }
        let sample = |i: usize| if i < base.len() { &base[i] } else { &extra[i - base.len()] };
        let mut order: Vec<usize> = (0..base.len() + extra.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut finite = true;
        for idx in order.chunks(config.batch_size) {
            // a batch of one has no batch statistics
            if idx.len() < 2 {
                continue;
            }
            let noisy: Vec<WindowSample>;
            let batch: Vec<&WindowSample> = if config.history_noise > 0.0 {
                let scale = weights.stats.offset_scale;
                noisy = idx
                    .iter()
                    .map(|&i| perturb_history(sample(i), config.history_noise, scale, &mut rng))
                    .collect();
                noisy.iter().collect()
            } else {
                idx.iter().map(|&i| sample(i)).collect()
            };
            let loss = batch_step(&weights, &mut running, &batch, &mut grad)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !loss.is_finite() || !norm.is_finite() {
                finite = false;
                break;
            }
            if norm > config.grad_clip {
                let k = config.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam.step(&mut weights.params, &grad, config.learning_rate);
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        if finite && weights.params.iter().chain(&running).any(|v| !v.is_finite()) {
            finite = false;
        }
        if !finite {
            log::warn!("training diverged at epoch {epoch}; keeping the last finite checkpoint");
            diverged_at = Some(epoch);
            break;
        }
        let mut current = weights.clone();
        current.buffers = running.clone();
        current.meta.epoch = epoch;
        current.round_to_storage();
        let train_loss = sum / count.max(1) as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            evaluate(&current, &val_set)?
        };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        curves.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss.is_finite() && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, current.clone()));
        }
        snapshot = Some(current);
    }
    match best {
        Some((_, weights)) => Ok(TrainOutcome {
            best_epoch: weights.meta.epoch,
            weights,
            curves,
            diverged_at,
        }),
        None => Err(Error::Diverged {
            epoch: diverged_at.unwrap_or(0),
        }),
    }
}

pub fn write_curves(path: &Path, curves: &[EpochStats]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,val_loss").expect("in-memory write");
    for c in curves {
        writeln!(out, "{},{:.9},{:.9}", c.epoch, c.train_loss, c.val_loss).expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, RawCenterlinePoint, TrackOptions};

    fn wavy(seed: f64) -> (TrackModel, RacelineOffset) {
        let raw: Vec<RawCenterlinePoint> = (0..300)
            .map(|i| {
                let u = i as f64 / 300.0 * std::f64::consts::TAU;
                let r = 120.0 + 15.0 * (3.0 * u + seed).sin();
                RawCenterlinePoint {
                    x: r * u.cos(),
                    y: r * u.sin(),
                    w_right: 5.0,
                    w_left: 5.0,
                }
            })
            .collect();
        let track = build_track(&raw, &TrackOptions::default()).unwrap();
        // a smooth stand-in for an expert: lean against the curvature
        let k = track.curvature();
        let kmax = k.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let offsets = k.iter().map(|v| 3.0 * v / kmax).collect();
        let line = RacelineOffset::new(&track, offsets).unwrap();
        (track, line)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            descriptor: Descriptor {
                history_len: 10,
                future_len: 20,
                target_len: 5,
                channels: 8,
                hidden: 16,
                heads: 2,
                ..Descriptor::default()
            },
            epochs: 6,
            batch_size: 16,
            learning_rate: 3e-3,
            stride: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = vec![wavy(0.0), wavy(1.3)];
        let cfg = small_config();
        let a = train(&data, &cfg, "t").unwrap();
        let first = a.curves.first().unwrap().train_loss;
        let last = a.curves.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        assert!(a.diverged_at.is_none());
        let b = train(&data, &cfg, "t").unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.curves, b.curves);
        let best = a.curves.iter().map(|c| c.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.curves[a.best_epoch].val_loss, best);
    }

    #[test]
    fn divergence_keeps_last_finite_checkpoint() {
        let data = vec![wavy(0.0)];
        let cfg = TrainConfig {
            learning_rate: 1e300,
            grad_clip: f64::INFINITY,
            epochs: 4,
            ..small_config()
        };
        match train(&data, &cfg, "t") {
            Ok(out) => {
                assert!(out.diverged_at.is_some());
                assert!(out.weights.params.iter().all(|v| v.is_finite()));
            }
            Err(e) => assert!(matches!(e, Error::Diverged { .. }), "{e}"),
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut x, &g, 0.01);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }
}
