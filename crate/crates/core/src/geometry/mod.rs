//! Arc-length track models: resampling, heading, curvature and border bookkeeping.
//!
//! Conventions shared by every module: the lateral offset `d` is positive toward the left
//! border of the travel direction and curvature is positive for left turns.

mod frenet;
pub mod io;

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::PeriodicSpline;

pub use frenet::{cartesian_to_frenet, frenet_to_cartesian, offsets_to_path, FrenetPose};

pub type Vec2 = Vector2<f64>;

/// Default arc-length resolution of the dataset (m).
pub const DEFAULT_STEP: f64 = 2.0;

/// One row of a centerline file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawCenterlinePoint {
    pub x: f64,
    pub y: f64,
    pub w_right: f64,
    pub w_left: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    /// Target arc-length spacing (m).
    pub step: f64,
    /// Centered moving-average window applied to the curvature (samples, odd; 1 disables).
    pub curvature_window: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            curvature_window: 5,
        }
    }
}

/// Closed reference line sampled at uniform arc length.
#[derive(Debug, Clone)]
pub struct TrackModel {
    points: Vec<Vec2>,
    step: f64,
    heading: Vec<f64>,
    curvature: Vec<f64>,
    border_left: Vec<f64>,
    border_right: Vec<f64>,
    normals: Vec<Vec2>,
    spline_x: PeriodicSpline,
    spline_y: PeriodicSpline,
    curvature_window: usize,
}

impl TrackModel {
    /// Assembles a model from samples that are already uniformly spaced by `step`.
    pub fn from_samples(
        points: Vec<Vec2>,
        step: f64,
        border_left: Vec<f64>,
        border_right: Vec<f64>,
        curvature_window: usize,
    ) -> Result<Self> {
        let n = points.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!("track needs >= 4 samples, got {n}")));
        }
        if border_left.len() != n || border_right.len() != n {
            return Err(Error::CountMismatch {
                expected: n,
                actual: border_left.len().min(border_right.len()),
            });
        }
        if let Some(i) = border_left
            .iter()
            .zip(&border_right)
            .position(|(l, r)| !(*l > 0.0 && *r > 0.0 && l.is_finite() && r.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "track border widths must be positive (sample {i})"
            )));
        }
        let heading = heading_of(&points)?;
        let raw = curvature_from_heading(&heading, step);
        let curvature = smooth_periodic(&raw, curvature_window);
        let spline_x = PeriodicSpline::uniform(points.iter().map(|p| p.x).collect(), step)?;
        let spline_y = PeriodicSpline::uniform(points.iter().map(|p| p.y).collect(), step)?;
        let normals = (0..n)
            .map(|i| {
                let s = i as f64 * step;
                let t = Vec2::new(spline_x.derivative(s), spline_y.derivative(s)).normalize();
                Vec2::new(-t.y, t.x)
            })
            .collect();
        Ok(Self {
            points,
            step,
            heading,
            curvature,
            border_left,
            border_right,
            normals,
            spline_x,
            spline_y,
            curvature_window,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lap length `L = N * step` (m).
    pub fn length(&self) -> f64 {
        self.points.len() as f64 * self.step
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_closed(&self) -> bool {
        true
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    /// Unwrapped heading per sample (rad).
    pub fn heading(&self) -> &[f64] {
        &self.heading
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn border_left(&self) -> &[f64] {
        &self.border_left
    }

    pub fn border_right(&self) -> &[f64] {
        &self.border_right
    }

    /// Left unit normals of the interpolating spline at each sample.
    pub fn normals(&self) -> &[Vec2] {
        &self.normals
    }

    pub fn curvature_window(&self) -> usize {
        self.curvature_window
    }

    /// Arc length of sample `i`.
    pub fn s_at(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// Wraps an arc length into `[0, L)`.
    pub fn wrap_s(&self, s: f64) -> f64 {
        let l = self.length();
        let w = s.rem_euclid(l);
        if w >= l {
            0.0
        } else {
            w
        }
    }

    /// Reference-line position at arc length `s` (cubic interpolation between samples).
    pub fn position_at(&self, s: f64) -> Vec2 {
        Vec2::new(self.spline_x.eval(s), self.spline_y.eval(s))
    }

    /// First and second derivative of the reference line with respect to `s`.
    pub(crate) fn derivatives_at(&self, s: f64) -> (Vec2, Vec2, Vec2) {
        let (x, dx, ddx) = self.spline_x.eval_all(s);
        let (y, dy, ddy) = self.spline_y.eval_all(s);
        (Vec2::new(x, y), Vec2::new(dx, dy), Vec2::new(ddx, ddy))
    }

    /// Left unit normal at arc length `s`.
    pub fn normal_at(&self, s: f64) -> Vec2 {
        let t = Vec2::new(self.spline_x.derivative(s), self.spline_y.derivative(s)).normalize();
        Vec2::new(-t.y, t.x)
    }

    fn interp_linear(&self, values: &[f64], s: f64) -> f64 {
        let n = values.len();
        let u = self.wrap_s(s) / self.step;
        let i = (u.floor() as usize).min(n - 1);
        let f = u - i as f64;
        values[i] * (1.0 - f) + values[(i + 1) % n] * f
    }

    /// `(b_left, b_right)` at arc length `s`, linearly interpolated.
    pub fn borders_at(&self, s: f64) -> (f64, f64) {
        (
            self.interp_linear(&self.border_left, s),
            self.interp_linear(&self.border_right, s),
        )
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.interp_linear(&self.curvature, s)
    }

    /// The same circuit driven in the opposite direction: sample order reversed,
    /// borders swapped and curvature negated.
    pub fn reversed(&self) -> Result<Self> {
        let n = self.len();
        let idx = |j: usize| (n - j) % n;
        let points = (0..n).map(|j| self.points[idx(j)]).collect();
        let left = (0..n).map(|j| self.border_right[idx(j)]).collect();
        let right = (0..n).map(|j| self.border_left[idx(j)]).collect();
        Self::from_samples(points, self.step, left, right, self.curvature_window)
    }

    /// The model re-indexed so that sample `k` becomes sample 0.
    pub fn rotated(&self, k: usize) -> Result<Self> {
        let n = self.len();
        let idx = |j: usize| (j + k) % n;
        Self::from_samples(
            (0..n).map(|j| self.points[idx(j)]).collect(),
            self.step,
            (0..n).map(|j| self.border_left[idx(j)]).collect(),
            (0..n).map(|j| self.border_right[idx(j)]).collect(),
            self.curvature_window,
        )
    }

    /// Rows suitable for writing back to a centerline file.
    pub fn to_raw(&self) -> Vec<RawCenterlinePoint> {
        self.points
            .iter()
            .zip(self.border_left.iter().zip(&self.border_right))
            .map(|(p, (&l, &r))| RawCenterlinePoint {
                x: p.x,
                y: p.y,
                w_right: r,
                w_left: l,
            })
            .collect()
    }

    /// Total signed turning `sum(kappa * step)` (rad).
    pub fn total_turning(&self) -> f64 {
        self.curvature.iter().sum::<f64>() * self.step
    }
}

/// Lateral offset raceline `d(s)` on a track's arc-length grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RacelineOffset {
    pub track_length: f64,
    pub step: f64,
    pub offsets: Vec<f64>,
}

impl RacelineOffset {
    pub fn new(track: &TrackModel, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != track.len() {
            return Err(Error::CountMismatch {
                expected: track.len(),
                actual: offsets.len(),
            });
        }
        Ok(Self {
            track_length: track.length(),
            step: track.step(),
            offsets,
        })
    }

    pub fn zeros(track: &TrackModel) -> Self {
        Self {
            track_length: track.length(),
            step: track.step(),
            offsets: vec![0.0; track.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn check_matches(&self, track: &TrackModel) -> Result<()> {
        if self.offsets.len() != track.len() {
            return Err(Error::CountMismatch {
                expected: track.len(),
                actual: self.offsets.len(),
            });
        }
        Ok(())
    }

    /// Clamps every sample into `[-b_right + margin, b_left - margin]`.
    pub fn clamped(&self, track: &TrackModel, margin: f64) -> Self {
        let offsets = self
            .offsets
            .iter()
            .zip(track.border_left().iter().zip(track.border_right()))
            .map(|(&d, (&l, &r))| d.clamp(-r + margin, l - margin))
            .collect();
        Self {
            offsets,
            ..self.clone()
        }
    }
}

/// Builds an arc-length resampled model from a raw closed centerline.
pub fn build_track(raw: &[RawCenterlinePoint], options: &TrackOptions) -> Result<TrackModel> {
    let step = options.step;
    if !(step > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    if raw.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "track needs >= 4 centerline points, got {}",
            raw.len()
        )));
    }
    if let Some(i) = raw.iter().position(|p| {
        !(p.w_left > 0.0 && p.w_right > 0.0)
            || !p.x.is_finite()
            || !p.y.is_finite()
            || !p.w_left.is_finite()
            || !p.w_right.is_finite()
    }) {
        return Err(Error::InvalidInput(format!(
            "centerline row {i} has a non-positive or non-finite value"
        )));
    }
    let first = Vec2::new(raw[0].x, raw[0].y);
    let last = Vec2::new(raw[raw.len() - 1].x, raw[raw.len() - 1].y);
    let gap = (last - first).norm();
    let limit = 10.0 * step;
    if gap > limit {
        return Err(Error::TrackNotClosed { gap, limit });
    }
    let mut rows: Vec<RawCenterlinePoint> = Vec::with_capacity(raw.len());
    for p in raw {
        // consecutive duplicates break the chord parameterization
        if let Some(prev) = rows.last() {
            if (Vec2::new(p.x - prev.x, p.y - prev.y)).norm() < 1e-9 {
                continue;
            }
        }
        rows.push(*p);
    }
    if rows.len() > 1 {
        let a = rows[0];
        let b = rows[rows.len() - 1];
        if Vec2::new(a.x - b.x, a.y - b.y).norm() < 1e-9 {
            rows.pop();
        }
    }
    if rows.len() < 4 {
        return Err(Error::InvalidInput("too few distinct centerline points".into()));
    }

    // chord-length parameterization of the raw loop
    let m = rows.len();
    let mut knots = Vec::with_capacity(m);
    let mut u = 0.0;
    for i in 0..m {
        knots.push(u);
        let j = (i + 1) % m;
        u += Vec2::new(rows[j].x - rows[i].x, rows[j].y - rows[i].y).norm();
    }
    let period = u;
    let sx = PeriodicSpline::new(knots.clone(), rows.iter().map(|r| r.x).collect(), period)?;
    let sy = PeriodicSpline::new(knots.clone(), rows.iter().map(|r| r.y).collect(), period)?;
    let curve = |t: f64| Vec2::new(sx.eval(t), sy.eval(t));
    let tangent = |t: f64| Vec2::new(sx.derivative(t), sy.derivative(t));

    let arc = spline_arc_length(&knots, period, &tangent);
    let n = ((arc / step).round() as usize).max(4);

    // march equal chords; tune the chord so the N-th chord closes the loop exactly
    let march = |h: f64| -> (Vec<f64>, f64) {
        let mut params = Vec::with_capacity(n);
        let mut t = 0.0;
        params.push(t);
        for k in 0..n {
            let p0 = curve(t);
            let mut tn = t + h / tangent(t).norm().max(1e-12);
            for _ in 0..50 {
                let diff = curve(tn) - p0;
                let phi = diff.norm_squared() - h * h;
                let dphi = 2.0 * diff.dot(&tangent(tn));
                if dphi.abs() < 1e-300 {
                    break;
                }
                let delta = phi / dphi;
                tn -= delta;
                if delta.abs() < 1e-13 * (1.0 + tn.abs()) {
                    break;
                }
            }
            t = tn;
            if k + 1 < n {
                params.push(t);
            }
        }
        (params, t - period)
    };
    let mut h0 = arc / n as f64;
    let (mut params, mut g0) = march(h0);
    let mut h1 = h0 * (1.0 - 1e-4);
    let (mut p1, mut g1) = march(h1);
    for _ in 0..60 {
        if g1.abs() < 1e-11 * period {
            break;
        }
        if (g1 - g0).abs() < 1e-300 {
            break;
        }
        let h2 = h1 - g1 * (h1 - h0) / (g1 - g0);
        h0 = h1;
        g0 = g1;
        h1 = h2;
        let r = march(h1);
        p1 = r.0;
        g1 = r.1;
    }
    if g1.abs() < g0.abs() || params.is_empty() {
        params = p1;
    } else {
        h1 = h0;
        params = march(h1).0;
    }
    let chord = h1;

    let points: Vec<Vec2> = params.iter().map(|&t| curve(t)).collect();
    if let Some((a, b)) = find_self_intersection(&points) {
        return Err(Error::SelfIntersecting {
            first: a,
            second: b,
        });
    }
    // borders linearly interpolated in the raw parameter
    let interp = |values: &dyn Fn(&RawCenterlinePoint) -> f64, t: f64| -> f64 {
        let i = match knots.partition_point(|&k| k <= t) {
            0 => 0,
            p => p - 1,
        };
        let j = (i + 1) % m;
        let t1 = if j == 0 { period } else { knots[j] };
        let f = ((t - knots[i]) / (t1 - knots[i])).clamp(0.0, 1.0);
        values(&rows[i]) * (1.0 - f) + values(&rows[j]) * f
    };
    let border_left = params.iter().map(|&t| interp(&|r| r.w_left, t)).collect();
    let border_right = params.iter().map(|&t| interp(&|r| r.w_right, t)).collect();
    TrackModel::from_samples(
        points,
        chord,
        border_left,
        border_right,
        options.curvature_window,
    )
}

/// Gauss-Legendre arc length of a periodic spline curve.
fn spline_arc_length(knots: &[f64], period: f64, tangent: &dyn Fn(f64) -> Vec2) -> f64 {
    const NODES: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const WEIGHTS: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let m = knots.len();
    let mut total = 0.0;
    for i in 0..m {
        let a = knots[i];
        let b = if i + 1 < m { knots[i + 1] } else { period };
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * half * tangent(mid + half * x).norm();
        }
    }
    total
}

/// Heading of each sample as the direction of the central chord, unwrapped.
fn heading_of(points: &[Vec2]) -> Result<Vec<f64>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "curvature needs >= 3 points, got {n}"
        )));
    }
    let mut heading = Vec::with_capacity(n);
    let mut prev = 0.0;
    for i in 0..n {
        let d = points[(i + 1) % n] - points[(i + n - 1) % n];
        let raw = d.y.atan2(d.x);
        let value = if i == 0 { raw } else { prev + wrap_angle(raw - prev) };
        heading.push(value);
        prev = value;
    }
    Ok(heading)
}

fn curvature_from_heading(heading: &[f64], step: f64) -> Vec<f64> {
    let n = heading.len();
    (0..n)
        .map(|i| {
            let dtheta = wrap_angle(heading[(i + 1) % n] - heading[(i + n - 1) % n]);
            dtheta / (2.0 * step)
        })
        .collect()
}

/// Curvature of a closed, uniformly spaced polyline: central difference of the unwrapped
/// heading divided by the spacing, periodic at the seam.
pub fn curvature_of(points: &[Vec2], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    let heading = heading_of(points)?;
    Ok(curvature_from_heading(&heading, step))
}

/// Centered periodic moving average. Even windows are widened to the next odd size.
pub fn smooth_periodic(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if window <= 1 || n == 0 {
        return values.to_vec();
    }
    let half = (window / 2).min((n - 1) / 2);
    let width = (2 * half + 1) as f64;
    (0..n)
        .map(|i| {
            (0..=2 * half)
                .map(|k| values[(i + n + k - half) % n])
                .sum::<f64>()
                / width
        })
        .collect()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// First pair of non-adjacent segments of the closed polygon that intersect.
pub fn find_self_intersection(points: &[Vec2]) -> Option<(usize, usize)> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    // bucket segments on a coarse grid to avoid the full quadratic sweep
    let (mut min, mut max) = (points[0], points[0]);
    let mut longest: f64 = 0.0;
    for i in 0..n {
        let p = points[i];
        min = min.inf(&p);
        max = max.sup(&p);
        longest = longest.max((points[(i + 1) % n] - p).norm());
    }
    let cell = (longest * 4.0).max(1e-6);
    let nx = (((max.x - min.x) / cell).floor() as usize) + 1;
    let ny = (((max.y - min.y) / cell).floor() as usize) + 1;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    let cell_of = |p: Vec2| {
        (
            (((p.x - min.x) / cell).floor() as usize).min(nx - 1),
            (((p.y - min.y) / cell).floor() as usize).min(ny - 1),
        )
    };
    for i in 0..n {
        let (ax, ay) = cell_of(points[i]);
        let (bx, by) = cell_of(points[(i + 1) % n]);
        for cx in ax.min(bx)..=ax.max(bx) {
            for cy in ay.min(by)..=ay.max(by) {
                buckets[cy * nx + cx].push(i);
            }
        }
    }
    let mut found: Option<(usize, usize)> = None;
    for bucket in &buckets {
        for (k, &i) in bucket.iter().enumerate() {
            for &j in &bucket[k + 1..] {
                let (a, b) = (i.min(j), i.max(j));
                if b - a <= 1 || (a == 0 && b == n - 1) {
                    continue;
                }
                if segments_intersect(points[a], points[(a + 1) % n], points[b], points[(b + 1) % n]) {
                    found = match found {
                        Some(f) if f <= (a, b) => Some(f),
                        _ => Some((a, b)),
                    };
                }
            }
        }
    }
    found
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let cross = |o: Vec2, a: Vec2, b: Vec2| (a - o).perp(&(b - o));
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Dense closed polyline of a circle, counter-clockwise unless `clockwise`.
pub fn circle_centerline(
    radius: f64,
    w_right: f64,
    w_left: f64,
    samples: usize,
    clockwise: bool,
) -> Vec<RawCenterlinePoint> {
    (0..samples)
        .map(|i| {
            let mut a = 2.0 * PI * i as f64 / samples as f64;
            if clockwise {
                a = -a;
            }
            RawCenterlinePoint {
                x: radius * a.cos(),
                y: radius * a.sin(),
                w_right,
                w_left,
            }
        })
        .collect()
}

/// Stadium (two straights joined by semicircles), counter-clockwise.
pub fn stadium_centerline(
    straight: f64,
    radius: f64,
    width: f64,
    spacing: f64,
) -> Vec<RawCenterlinePoint> {
    let mut pts = Vec::new();
    let push = |pts: &mut Vec<RawCenterlinePoint>, x: f64, y: f64| {
        pts.push(RawCenterlinePoint {
            x,
            y,
            w_right: width,
            w_left: width,
        })
    };
    let ns = (straight / spacing).round().max(1.0) as usize;
    let na = (PI * radius / spacing).round().max(4.0) as usize;
    for i in 0..ns {
        push(&mut pts, -straight / 2.0 + straight * i as f64 / ns as f64, -radius);
    }
    for i in 0..na {
        let a = -PI / 2.0 + PI * i as f64 / na as f64;
        push(&mut pts, straight / 2.0 + radius * a.cos(), radius * a.sin());
    }
    for i in 0..ns {
        push(&mut pts, straight / 2.0 - straight * i as f64 / ns as f64, radius);
    }
    for i in 0..na {
        let a = PI / 2.0 + PI * i as f64 / na as f64;
        push(&mut pts, -straight / 2.0 + radius * a.cos(), radius * a.sin());
    }
    pts
}
