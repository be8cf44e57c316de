//! Similarity registration of a telemetry point set onto reference points.
//!
//! The alignment loss is the mean Euclidean distance from each transformed telemetry point
//! to its nearest reference point. It is minimized in three stages: a coarse rotation
//! sweep with centroid matching, a joint rotation/scale grid around the best coarse angle,
//! and a fixed-point polish that alternates nearest-neighbour assignment with a weighted
//! closed-form similarity fit.

use std::f64::consts::PI;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::AlignmentTransform;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Rotation step of the coarse sweep (degrees).
    pub coarse_step_deg: f64,
    /// Rotation step of the refinement grid (degrees).
    pub fine_step_deg: f64,
    /// Half-width of the refinement window around the best coarse angle (degrees).
    pub fine_span_deg: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_step: f64,
    /// Stop the polish once the loss improves by less than this (m).
    pub polish_tol: f64,
    pub polish_rounds: usize,
    /// Largest acceptable final loss (m).
    pub sanity_bound: f64,
    /// Points used by the two grid stages (evenly strided subset); the polish uses all.
    pub grid_points: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            coarse_step_deg: 2.0,
            fine_step_deg: 0.1,
            fine_span_deg: 2.0,
            sigma_min: 0.8,
            sigma_max: 1.2,
            sigma_step: 0.005,
            polish_tol: 1e-4,
            polish_rounds: 50,
            sanity_bound: 10.0,
            grid_points: 300,
        }
    }
}

impl AlignmentTransform {
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            t: [0.0, 0.0],
            sigma: 1.0,
            loss: 0.0,
        }
    }

    /// `sigma R(theta) p + t`.
    pub fn apply(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(
            self.sigma * (c * p.x - s * p.y) + self.t[0],
            self.sigma * (s * p.x + c * p.y) + self.t[1],
        )
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        let (tx, ty) = (self.t[0], self.t[1]);
        // R^T (q - t) / sigma
        Self {
            theta: -self.theta,
            t: [
                -(c * tx + s * ty) / self.sigma,
                -(-s * tx + c * ty) / self.sigma,
            ],
            sigma: 1.0 / self.sigma,
            loss: self.loss,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let t = self.apply(Vec2::new(other.t[0], other.t[1]));
        Self {
            theta: self.theta + other.theta,
            t: [t.x, t.y],
            sigma: self.sigma * other.sigma,
            loss: self.loss,
        }
    }
}

/// Exact nearest-neighbour index over reference points.
///
/// Built from a closed polyline, the match is refined from the nearest vertex onto its two
/// adjacent segments, so the loss measures distance to the curve rather than to its
/// samples.
pub struct NearestIndex {
    tree: ImmutableKdTree<f64, 2>,
    points: Vec<Vec2>,
    closed: bool,
}

impl NearestIndex {
    pub fn new(points: &[Vec2]) -> Result<Self> {
        Self::build(points, false)
    }

    pub fn closed_polyline(points: &[Vec2]) -> Result<Self> {
        Self::build(points, true)
    }

    fn build(points: &[Vec2], closed: bool) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty reference point set".into()));
        }
        let raw: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
        let tree = ImmutableKdTree::new_from_slice(&raw)
            .map_err(|e| Error::InvalidInput(format!("cannot index reference points: {e:?}")))?;
        Ok(Self {
            tree,
            points: points.to_vec(),
            closed,
        })
    }

    /// Closest reference location to `p` and its distance.
    pub fn nearest(&self, p: Vec2) -> (Vec2, f64) {
        let found = self
            .tree
            .query(&[p.x, p.y])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        let i = found.item as usize;
        let mut best = (self.points[i], found.distance);
        if self.closed {
            let n = self.points.len();
            for j in [(i + n - 1) % n, (i + 1) % n] {
                let a = self.points[i];
                let ab = self.points[j] - a;
                let len2 = ab.norm_squared();
                if len2 > 0.0 {
                    let foot = a + ab * ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
                    let dist2 = (p - foot).norm_squared();
                    if dist2 < best.1 {
                        best = (foot, dist2);
                    }
                }
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Mean nearest-neighbour distance of `points` under `transform`.
    pub fn loss(&self, points: &[Vec2], transform: &AlignmentTransform) -> f64 {
        let sum: f64 = points.iter().map(|&p| self.nearest(transform.apply(p)).1).sum();
        sum / points.len() as f64
    }
}

fn centroid(points: &[Vec2]) -> Vec2 {
    points.iter().sum::<Vec2>() / points.len() as f64
}

fn rotate(theta: f64, p: Vec2) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Candidate ordering: smaller loss first, ties to the smaller angle.
fn better(a: &AlignmentTransform, b: &AlignmentTransform) -> bool {
    a.loss < b.loss || (a.loss == b.loss && a.theta < b.theta)
}

fn best_of(candidates: Vec<AlignmentTransform>) -> AlignmentTransform {
    candidates
        .into_iter()
        .reduce(|a, b| if better(&b, &a) { b } else { a })
        .expect("non-empty candidate grid")
}

/// Estimates the similarity transform carrying `telemetry` onto `reference`.
pub fn register_similarity(
    telemetry: &[Vec2],
    reference: &[Vec2],
    config: &RegistrationConfig,
) -> Result<AlignmentTransform> {
    if reference.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "registration needs >= 10 reference points, got {}",
            reference.len()
        )));
    }
    register_to_index(telemetry, &NearestIndex::new(reference)?, config)
}

/// Same as [`register_similarity`] against a prebuilt index.
pub fn register_to_index(
    telemetry: &[Vec2],
    index: &NearestIndex,
    config: &RegistrationConfig,
) -> Result<AlignmentTransform> {
    if telemetry.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "registration needs >= 10 telemetry points, got {}",
            telemetry.len()
        )));
    }
    if !(config.sigma_min > 0.0 && config.sigma_min <= config.sigma_max) {
        return Err(Error::InvalidInput("scale bracket must be positive and ordered".into()));
    }
    let reference = &index.points;
    let stride = telemetry.len().div_ceil(config.grid_points.max(10));
    let subset: Vec<Vec2> = telemetry.iter().step_by(stride).copied().collect();
    let c_ref = centroid(reference);
    let c_tel = centroid(&subset);

    // stage 1: rotation sweep at unit scale, translation from the centroids
    let coarse = (360.0 / config.coarse_step_deg).round() as usize;
    let stage1 = best_of(par::map_range(coarse, |k| {
        let theta = (k as f64 * config.coarse_step_deg).to_radians();
        let t = c_ref - rotate(theta, c_tel);
        let mut tr = AlignmentTransform {
            theta,
            t: [t.x, t.y],
            sigma: 1.0,
            loss: 0.0,
        };
        tr.loss = index.loss(&subset, &tr);
        tr
    }));

    // stage 2: joint rotation and scale grid, translation re-estimated by the mean residual
    let fine_n = (config.fine_span_deg / config.fine_step_deg).round() as i64;
    let sigma_n = ((config.sigma_max - config.sigma_min) / config.sigma_step).round() as usize + 1;
    let grid: Vec<(f64, f64)> = (-fine_n..=fine_n)
        .flat_map(|k| {
            let theta = stage1.theta + (k as f64 * config.fine_step_deg).to_radians();
            (0..sigma_n).map(move |j| {
                let sigma = (config.sigma_min + j as f64 * config.sigma_step).min(config.sigma_max);
                (theta, sigma)
            })
        })
        .collect();
    let stage2 = best_of(par::map(&grid, |&(theta, sigma)| {
        let mut tr = AlignmentTransform {
            theta,
            t: stage1.t,
            sigma,
            loss: 0.0,
        };
        let anchor = c_ref - sigma * rotate(theta, c_tel);
        tr.t = [anchor.x, anchor.y];
        let mut shift = Vec2::zeros();
        for &p in &subset {
            let q = tr.apply(p);
            shift += index.nearest(q).0 - q;
        }
        shift /= subset.len() as f64;
        tr.t = [tr.t[0] + shift.x, tr.t[1] + shift.y];
        tr.loss = index.loss(&subset, &tr);
        tr
    }));

    let mut best = stage2;
    best.theta = wrap_theta(best.theta);
    best.loss = index.loss(telemetry, &best);
    let (polished, _) = polish(telemetry, index, best, config);
    if polished.loss > config.sanity_bound {
        return Err(Error::RegistrationFailed {
            best: polished,
            bound: config.sanity_bound,
        });
    }
    Ok(polished)
}

fn wrap_theta(theta: f64) -> f64 {
    theta.rem_euclid(2.0 * PI)
}

/// Fixed-point polish. Each round assigns nearest neighbours and refits the similarity by
/// iteratively reweighted least squares on the mean-distance loss (weights `1 / distance`).
/// The point-to-line fit is tried first, the point-to-point fit second. Rounds that would
/// raise the loss are rejected, so the returned history is non-increasing.
pub fn polish(
    telemetry: &[Vec2],
    index: &NearestIndex,
    start: AlignmentTransform,
    config: &RegistrationConfig,
) -> (AlignmentTransform, Vec<f64>) {
    let mut best = start;
    let mut history = vec![best.loss];
    for _ in 0..config.polish_rounds {
        let mut pairs = Vec::with_capacity(telemetry.len());
        for &p in telemetry {
            let (q, dist) = index.nearest(best.apply(p));
            pairs.push((p, q, 1.0 / dist.max(1e-6)));
        }
        let fits = [
            point_to_line_similarity(&pairs, &best, config.sigma_min, config.sigma_max),
            Some(weighted_similarity(&pairs, config.sigma_min, config.sigma_max)),
        ];
        let accepted = fits.into_iter().flatten().find_map(|mut candidate| {
            candidate.theta = wrap_theta(candidate.theta);
            candidate.loss = index.loss(telemetry, &candidate);
            (candidate.loss < best.loss).then_some(candidate)
        });
        let Some(candidate) = accepted else { break };
        let gain = best.loss - candidate.loss;
        best = candidate;
        history.push(best.loss);
        if gain < config.polish_tol {
            break;
        }
    }
    (best, history)
}

/// Weighted least squares on the residuals along the current correspondence directions.
/// With `A = [a -b; b a]` the map `A p + t` is linear in `(a, b, tx, ty)`.
fn point_to_line_similarity(
    pairs: &[(Vec2, Vec2, f64)],
    current: &AlignmentTransform,
    sigma_min: f64,
    sigma_max: f64,
) -> Option<AlignmentTransform> {
    let mut normal = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    for (p, q, w) in pairs {
        let r = current.apply(*p) - q;
        let dist = r.norm();
        if dist < 1e-9 {
            continue;
        }
        let n = r / dist;
        let row = Vector4::new(n.x * p.x + n.y * p.y, n.y * p.x - n.x * p.y, n.x, n.y);
        normal += *w * row * row.transpose();
        rhs += *w * n.dot(q) * row;
    }
    let z = normal.cholesky()?.solve(&rhs);
    let sigma = z[0].hypot(z[1]);
    if !sigma.is_finite() || sigma == 0.0 {
        return None;
    }
    let theta = z[1].atan2(z[0]);
    Some(AlignmentTransform {
        theta,
        t: [z[2], z[3]],
        sigma: sigma.clamp(sigma_min, sigma_max),
        loss: 0.0,
    })
}

/// Closed-form weighted similarity `argmin sum w |sigma R p + t - q|^2` with the scale
/// clamped into `[sigma_min, sigma_max]`.
fn weighted_similarity(pairs: &[(Vec2, Vec2, f64)], sigma_min: f64, sigma_max: f64) -> AlignmentTransform {
    let wsum: f64 = pairs.iter().map(|x| x.2).sum();
    let p_bar = pairs.iter().map(|(p, _, w)| p * *w).sum::<Vec2>() / wsum;
    let q_bar = pairs.iter().map(|(_, q, w)| q * *w).sum::<Vec2>() / wsum;
    let (mut re, mut im, mut pp) = (0.0, 0.0, 0.0);
    for (p, q, w) in pairs {
        let a = p - p_bar;
        let b = q - q_bar;
        re += w * (a.x * b.x + a.y * b.y);
        im += w * (a.x * b.y - a.y * b.x);
        pp += w * a.norm_squared();
    }
    let theta = im.atan2(re);
    let sigma = ((re * re + im * im).sqrt() / pp.max(1e-300)).clamp(sigma_min, sigma_max);
    let t = q_bar - sigma * rotate(theta, p_bar);
    AlignmentTransform {
        theta,
        t: [t.x, t.y],
        sigma,
        loss: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize) -> Vec<Vec2> {
        // an irregular closed curve, not rotationally symmetric
        (0..n)
            .map(|i| {
                let u = 2.0 * PI * i as f64 / n as f64;
                let r = 100.0 + 30.0 * (2.0 * u).cos() + 15.0 * (3.0 * u + 0.4).sin();
                Vec2::new(r * u.cos() + 20.0, 0.7 * r * u.sin())
            })
            .collect()
    }

    #[test]
    fn identity_is_recovered_exactly() {
        let pts = blob(400);
        let tr = register_similarity(&pts, &pts, &RegistrationConfig::default()).unwrap();
        let theta = if tr.theta > PI { tr.theta - 2.0 * PI } else { tr.theta };
        assert!(theta.abs() < 1e-3, "{tr:?}");
        assert!(Vec2::new(tr.t[0], tr.t[1]).norm() < 1e-3);
        assert!((tr.sigma - 1.0).abs() < 1e-3);
        assert!(tr.loss < 1e-6);
    }

    #[test]
    fn inverse_and_compose_round_trip() {
        let a = AlignmentTransform {
            theta: 0.7,
            t: [3.0, -2.0],
            sigma: 1.1,
            loss: 0.0,
        };
        let p = Vec2::new(5.0, 8.0);
        let back = a.inverse().apply(a.apply(p));
        assert!((back - p).norm() < 1e-12);
        let both = a.compose(&a.inverse());
        assert!(both.apply(p).metric_distance(&p) < 1e-12);
    }

    #[test]
    fn weighted_fit_recovers_exact_pairs() {
        let truth = AlignmentTransform {
            theta: -1.2,
            t: [4.0, 9.0],
            sigma: 0.93,
            loss: 0.0,
        };
        let pairs: Vec<_> = blob(50).into_iter().map(|p| (p, truth.apply(p), 1.0)).collect();
        let fit = weighted_similarity(&pairs, 0.8, 1.2);
        assert!((fit.theta - truth.theta).abs() < 1e-12);
        assert!((fit.sigma - truth.sigma).abs() < 1e-12);
        assert!((fit.t[0] - 4.0).abs() < 1e-9 && (fit.t[1] - 9.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_transform_of_noisy_copy() {
        let reference = blob(1500);
        let truth = AlignmentTransform {
            theta: 30f64.to_radians(),
            t: [10.0, 5.0],
            sigma: 1.02,
            loss: 0.0,
        };
        let inv = truth.inverse();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let telemetry: Vec<Vec2> = blob(500)
            .into_iter()
            .map(|p| {
                let noisy = p + Vec2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                inv.apply(noisy)
            })
            .collect();
        let tr = register_similarity(&telemetry, &reference, &RegistrationConfig::default()).unwrap();
        assert!((tr.theta - truth.theta).abs().to_degrees() < 0.5, "{tr:?}");
        assert!((tr.sigma - truth.sigma).abs() < 0.005, "{tr:?}");
        assert!(Vec2::new(tr.t[0] - 10.0, tr.t[1] - 5.0).norm() < 0.1, "{tr:?}");
    }

    #[test]
    fn polish_never_increases_loss() {
        let reference = blob(800);
        let index = NearestIndex::new(&reference).unwrap();
        let telemetry: Vec<Vec2> = blob(300);
        let start = AlignmentTransform {
            theta: 0.05,
            t: [2.0, -1.0],
            sigma: 1.03,
            loss: 0.0,
        };
        let start = AlignmentTransform {
            loss: index.loss(&telemetry, &start),
            ..start
        };
        let (_, history) = polish(&telemetry, &index, start, &RegistrationConfig::default());
        assert!(history.len() >= 2);
        for w in history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn registration_is_equivariant() {
        let reference = blob(1200);
        let base: Vec<Vec2> = blob(300).iter().map(|p| p * 1.01 + Vec2::new(0.5, -0.3)).collect();
        let config = RegistrationConfig::default();
        let plain = register_similarity(&base, &reference, &config).unwrap();
        let warp = AlignmentTransform {
            theta: 2.1,
            t: [-40.0, 17.0],
            sigma: 0.95,
            loss: 0.0,
        };
        let moved: Vec<Vec2> = base.iter().map(|&p| warp.apply(p)).collect();
        let found = register_similarity(&moved, &reference, &config).unwrap();
        let index = NearestIndex::new(&reference).unwrap();
        let composed = index.loss(&base, &found.compose(&warp));
        assert!((composed - plain.loss).abs() < 1e-4, "{composed} vs {}", plain.loss);
    }

    #[test]
    fn hopeless_registration_reports_best() {
        let reference = blob(200);
        let far: Vec<Vec2> = (0..50).map(|i| Vec2::new(i as f64 * 1e4, 0.0)).collect();
        let config = RegistrationConfig {
            sanity_bound: 1.0,
            ..RegistrationConfig::default()
        };
        assert!(matches!(
            register_similarity(&far, &reference, &config),
            Err(Error::RegistrationFailed { .. })
        ));
    }
}
