use super::{RacelineOffset, TrackModel, Vec2};
use crate::error::{Error, Result};

/// Track-aligned coordinates: arc length `s` in `[0, L)` and signed lateral offset `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetPose {
    pub s: f64,
    pub d: f64,
    /// Inside the borders and on the near side of the local center of curvature.
    pub in_bounds: bool,
}

impl FrenetPose {
    pub fn new(s: f64, d: f64) -> Self {
        Self {
            s,
            d,
            in_bounds: true,
        }
    }
}

/// `c(s) + d * n(s)` with `n` the left unit normal of the interpolated reference line.
pub fn frenet_to_cartesian(track: &TrackModel, pose: FrenetPose) -> Vec2 {
    track.position_at(pose.s) + pose.d * track.normal_at(pose.s)
}

fn pose_in_bounds(track: &TrackModel, s: f64, d: f64) -> bool {
    let (left, right) = track.borders_at(s);
    let kappa = track.curvature_at(s);
    let singular = kappa.abs() > 0.0 && d.abs() >= 1.0 / kappa.abs();
    -right <= d && d <= left && !singular
}

/// Projects a point onto the reference line.
pub fn cartesian_to_frenet(track: &TrackModel, point: Vec2) -> Result<FrenetPose> {
    let pts = track.points();
    let n = pts.len();
    let h = track.step();
    // nearest polyline segment, ties to the smallest index
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for i in 0..n {
        let a = pts[i];
        let ab = pts[(i + 1) % n] - a;
        let t = ((point - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let dist2 = (a + t * ab - point).norm_squared();
        if dist2 < best.0 {
            best = (dist2, i, t);
        }
    }
    let (_, seg, t) = best;
    let mut s = (seg as f64 + t) * h;

    // Newton on (c(s) - p) . c'(s) = 0 over the spline, kept within a segment of the start
    let s_lo = s - h;
    let s_hi = s + h;
    let dist2 = |s: f64| (track.position_at(s) - point).norm_squared();
    let mut f_best = dist2(s);
    for _ in 0..50 {
        let (c, d1, d2) = track.derivatives_at(s);
        let r = c - point;
        let g = r.dot(&d1);
        let hess = d1.norm_squared() + r.dot(&d2);
        let mut next = if hess > 0.0 { s - g / hess } else { s - g.signum() * 0.25 * h };
        next = next.clamp(s_lo, s_hi);
        let mut f_next = dist2(next);
        let mut tries = 0;
        while f_next > f_best && tries < 30 {
            next = 0.5 * (s + next);
            f_next = dist2(next);
            tries += 1;
        }
        let moved = (next - s).abs();
        let improvement = f_best - f_next;
        if f_next <= f_best {
            s = next;
            f_best = f_next;
        }
        if moved < 1e-12 || (improvement >= 0.0 && improvement < 1e-9 && moved < 1e-9) {
            break;
        }
    }
    let s = track.wrap_s(s);
    let c = track.position_at(s);
    let normal = track.normal_at(s);
    let diff = point - c;
    let distance = diff.norm();
    let (left, right) = track.borders_at(s);
    let bound = left.max(right) + 10.0;
    if distance > bound {
        return Err(Error::OffTrack { distance, bound });
    }
    let d = diff.dot(&normal);
    Ok(FrenetPose {
        s,
        d,
        in_bounds: pose_in_bounds(track, s, d),
    })
}

/// Cartesian polyline of a lateral-offset raceline (one point per track sample).
pub fn offsets_to_path(track: &TrackModel, line: &RacelineOffset) -> Result<Vec<Vec2>> {
    line.check_matches(track)?;
    Ok(line
        .offsets
        .iter()
        .enumerate()
        .map(|(i, &d)| frenet_to_cartesian(track, FrenetPose::new(track.s_at(i), d)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, circle_centerline, TrackOptions};

    fn circle(radius: f64, clockwise: bool) -> TrackModel {
        build_track(
            &circle_centerline(radius, 5.0, 5.0, 360, clockwise),
            &TrackOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_offset_lies_on_reference_line() {
        let track = circle(50.0, false);
        for i in 0..track.len() {
            let p = frenet_to_cartesian(&track, FrenetPose::new(track.s_at(i), 0.0));
            assert!((p - track.points()[i]).norm() < 1e-9);
        }
    }

    // Left of a clockwise circle is the outside; of a counter-clockwise one, the inside.
    #[test]
    fn lateral_offset_on_circles() {
        let cw = circle(50.0, true);
        let ccw = circle(50.0, false);
        for s in [0.0, 17.3, 200.0] {
            let p = frenet_to_cartesian(&cw, FrenetPose::new(s, -5.0));
            assert!((p.norm() - 45.0).abs() < 1e-6);
            let q = frenet_to_cartesian(&ccw, FrenetPose::new(s, -5.0));
            assert!((q.norm() - 55.0).abs() < 1e-6);
        }
        let pose = cartesian_to_frenet(&cw, Vec2::new(53.0 * 0.6, 53.0 * 0.8)).unwrap();
        assert!((pose.d - 3.0).abs() < 1e-6);
        let pose = cartesian_to_frenet(&ccw, Vec2::new(53.0 * 0.6, 53.0 * 0.8)).unwrap();
        assert!((pose.d + 3.0).abs() < 1e-6);
    }

    #[test]
    fn point_on_line_projects_to_itself() {
        let track = circle(80.0, false);
        for &s in &[0.0, 3.3, 101.7, 400.0] {
            let p = track.position_at(s);
            let pose = cartesian_to_frenet(&track, p).unwrap();
            assert!((pose.s - s).abs() < 1e-6, "{} vs {}", pose.s, s);
            assert!(pose.d.abs() < 1e-9);
        }
    }

    #[test]
    fn seam_stays_in_range() {
        let track = circle(50.0, false);
        let l = track.length();
        let p = frenet_to_cartesian(&track, FrenetPose::new(l - 1e-7, 1.0));
        let pose = cartesian_to_frenet(&track, p).unwrap();
        assert!(pose.s >= 0.0 && pose.s < l);
        let ds = (pose.s - (l - 1e-7)).abs().min(pose.s + 1e-7);
        assert!(ds < 1e-6);
    }

    #[test]
    fn far_point_is_off_track() {
        let track = circle(50.0, false);
        assert!(matches!(
            cartesian_to_frenet(&track, Vec2::new(200.0, 0.0)),
            Err(Error::OffTrack { .. })
        ));
    }

    #[test]
    fn singular_offset_is_flagged() {
        // tight circle where the center of curvature is inside the left border
        let track = build_track(
            &circle_centerline(6.0, 2.0, 8.0, 200, false),
            &TrackOptions {
                step: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        let p = frenet_to_cartesian(&track, FrenetPose::new(3.0, 1.0));
        assert!(cartesian_to_frenet(&track, p).unwrap().in_bounds);
        let far = Vec2::new(0.0, 0.0);
        let pose = cartesian_to_frenet(&track, far).unwrap();
        assert!(!pose.in_bounds);
    }

    #[test]
    fn constant_offset_path_on_circle() {
        let track = circle(50.0, true);
        let line = RacelineOffset::new(&track, vec![2.0; track.len()]).unwrap();
        for p in offsets_to_path(&track, &line).unwrap() {
            assert!((p.norm() - 52.0).abs() < 1e-6);
        }
        let zero = offsets_to_path(&track, &RacelineOffset::zeros(&track)).unwrap();
        for (p, c) in zero.iter().zip(track.points()) {
            assert!((p - c).norm() < 1e-9);
        }
        let short = RacelineOffset {
            offsets: vec![0.0; 3],
            ..line
        };
        assert!(offsets_to_path(&track, &short).is_err());
    }
}
