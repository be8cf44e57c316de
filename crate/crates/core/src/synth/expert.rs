//! Synthetic expert racelines: the minimum-time optimum itself.

use crate::error::{Error, Result};
use crate::geometry::TrackModel;
use crate::seeds::{min_curvature_seed, solver_mc_margin};
use crate::solver::{solve_min_time, MinTimeSolution, SolverConfig, VehicleParams};

/// KKT tolerance of expert solves, tighter than the benchmark runs.
pub const EXPERT_KKT_TOL: f64 = 1e-8;

/// Solves the minimum-time problem from the minimum-curvature seed to a tight tolerance.
pub fn generate_expert(
    track: &TrackModel,
    params: &VehicleParams,
    config: &SolverConfig,
) -> Result<MinTimeSolution> {
    let seed = min_curvature_seed(track, solver_mc_margin(params.half_width))?;
    let config = SolverConfig {
        kkt_tol: config.kkt_tol.min(EXPERT_KKT_TOL),
        ..*config
    };
    let solution = solve_min_time(track, &seed, params, &config)?;
    if !solution.converged {
        return Err(Error::NotConverged {
            iterations: solution.iterations,
            kkt_residual: solution.kkt_residual,
        });
    }
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RacelineOffset;
    use crate::seeds::centerline_seed;
    use crate::solver::lap_time_of;
    use crate::synth::{generate_track, TrackSpec};

    #[test]
    fn expert_beats_geometric_lines_and_stays_inside() {
        let params = VehicleParams::default();
        let track = generate_track(&TrackSpec::with_seed(11)).unwrap();
        let expert = generate_expert(&track, &params, &SolverConfig::default()).unwrap();
        let cl = lap_time_of(&track, &centerline_seed(&track), &params).unwrap();
        let mc = lap_time_of(
            &track,
            &min_curvature_seed(&track, solver_mc_margin(params.half_width)).unwrap(),
            &params,
        )
        .unwrap();
        assert!(expert.lap_time <= cl.min(mc) + 1e-6, "{} {cl} {mc}", expert.lap_time);
        for (i, d) in expert.offsets.offsets.iter().enumerate() {
            assert!(*d <= track.border_left()[i] - params.half_width + 1e-6);
            assert!(*d >= -track.border_right()[i] + params.half_width - 1e-6);
        }
        // the reported time is the profile time of the returned line, up to solver tolerance
        let line: &RacelineOffset = &expert.offsets;
        let fb = lap_time_of(&track, line, &params).unwrap();
        assert!((fb - expert.lap_time).abs() / fb < 1e-3, "{fb} {}", expert.lap_time);
    }
}
