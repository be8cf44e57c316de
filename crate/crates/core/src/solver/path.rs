//! Geometry of an offset path `p_i = c_i + d_i n_i` and its derivatives with respect to
//! the offsets.
//!
//! Segment `i` joins node `i` to node `i + 1`. Path curvature at node `i` is the discrete
//! turning angle between segments `i - 1` and `i` divided by their mean length, so it
//! depends on `d[i-1]`, `d[i]` and `d[i+1]` only.

use crate::geometry::{TrackModel, Vec2};

#[derive(Debug, Clone)]
pub struct PathGeometry {
    pub points: Vec<Vec2>,
    pub seg_len: Vec<f64>,
    pub curvature: Vec<f64>,
}

/// Derivatives of the path quantities with respect to neighbouring offsets.
#[derive(Debug, Clone)]
pub struct PathDerivatives {
    /// `d seg_len[i] / d (d[i], d[i+1])`.
    pub seg_len: Vec<[f64; 2]>,
    /// `d curvature[i] / d (d[i-1], d[i], d[i+1])`.
    pub curvature: Vec<[f64; 3]>,
}

pub fn path_points(track: &TrackModel, offsets: &[f64]) -> Vec<Vec2> {
    track
        .points()
        .iter()
        .zip(track.normals())
        .zip(offsets)
        .map(|((c, n), &d)| c + d * n)
        .collect()
}

pub fn path_geometry(track: &TrackModel, offsets: &[f64]) -> PathGeometry {
    let points = path_points(track, offsets);
    let n = points.len();
    let seg: Vec<Vec2> = (0..n).map(|i| points[(i + 1) % n] - points[i]).collect();
    let seg_len: Vec<f64> = seg.iter().map(|e| e.norm()).collect();
    let curvature = (0..n)
        .map(|i| {
            let im = (i + n - 1) % n;
            let (a, b) = (seg[im], seg[i]);
            let phi = a.perp(&b).atan2(a.dot(&b));
            2.0 * phi / (seg_len[im] + seg_len[i])
        })
        .collect();
    PathGeometry {
        points,
        seg_len,
        curvature,
    }
}

pub fn path_geometry_with_derivatives(
    track: &TrackModel,
    offsets: &[f64],
) -> (PathGeometry, PathDerivatives) {
    let geo = path_geometry(track, offsets);
    let normals = track.normals();
    let n = geo.points.len();
    let seg: Vec<Vec2> = (0..n).map(|i| geo.points[(i + 1) % n] - geo.points[i]).collect();

    let seg_len_grad = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            let u = seg[i] / geo.seg_len[i];
            [-u.dot(&normals[i]), u.dot(&normals[j])]
        })
        .collect();

    let curvature_grad = (0..n)
        .map(|i| {
            let im = (i + n - 1) % n;
            let ip = (i + 1) % n;
            let (a, b) = (seg[im], seg[i]);
            let cross = a.perp(&b);
            let dot = a.dot(&b);
            let phi = cross.atan2(dot);
            let denom = cross * cross + dot * dot;
            // d phi / d a and d phi / d b
            let dcross_da = Vec2::new(b.y, -b.x);
            let dcross_db = Vec2::new(-a.y, a.x);
            let dphi_da = (dot * dcross_da - cross * b) / denom;
            let dphi_db = (dot * dcross_db - cross * a) / denom;
            let (la, lb) = (geo.seg_len[im], geo.seg_len[i]);
            let sum = la + lb;
            let dk_da = 2.0 * dphi_da / sum - 2.0 * phi / (sum * sum) * (a / la);
            let dk_db = 2.0 * dphi_db / sum - 2.0 * phi / (sum * sum) * (b / lb);
            // a = p_i - p_{i-1}, b = p_{i+1} - p_i
            [
                -dk_da.dot(&normals[im]),
                dk_da.dot(&normals[i]) - dk_db.dot(&normals[i]),
                dk_db.dot(&normals[ip]),
            ]
        })
        .collect();

    (
        geo,
        PathDerivatives {
            seg_len: seg_len_grad,
            curvature: curvature_grad,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, stadium_centerline, TrackOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn derivatives_match_central_differences() {
        let track =
            build_track(&stadium_centerline(120.0, 30.0, 5.0, 2.0), &TrackOptions::default())
                .unwrap();
        let n = track.len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, der) = path_geometry_with_derivatives(&track, &d);
        let h = 1e-6;
        for _ in 0..50 {
            let i = rng.random_range(0..n);
            for (k, off) in [n - 1, 0, 1].into_iter().enumerate() {
                let j = (i + off) % n;
                let mut dp = d.clone();
                let mut dm = d.clone();
                dp[j] += h;
                dm[j] -= h;
                let (gp, gm) = (path_geometry(&track, &dp), path_geometry(&track, &dm));
                let fd = (gp.curvature[i] - gm.curvature[i]) / (2.0 * h);
                let an = der.curvature[i][k];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
                if k >= 1 {
                    let fd = (gp.seg_len[i] - gm.seg_len[i]) / (2.0 * h);
                    let an = der.seg_len[i][k - 1];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }
}
