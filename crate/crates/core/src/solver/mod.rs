//! Minimum-lap-time optimization of a point mass with a friction ellipse on the Frenet grid.

pub mod io;
pub mod ipm;
pub mod nlp;
pub mod path;
pub mod profile;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};

pub use ipm::{solve_ipm, ConstrainedProblem, SolverConfig, TraceEntry};
pub use nlp::{build_nlp, Evaluation, MinTimeNlp};
pub use profile::{lap_time_of, velocity_profile_fb, SpeedProfile};

/// Point-mass vehicle limits. Defaults approximate an F1 car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Tire-road friction coefficient.
    pub mu: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Peak driving acceleration (m/s^2).
    pub a_drive: f64,
    /// Peak braking deceleration, positive (m/s^2).
    pub a_brake: f64,
    /// Top speed (m/s).
    pub v_max: f64,
    /// Vehicle half width (m).
    pub half_width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mu: 1.6,
            g: 9.81,
            a_drive: 12.0,
            a_brake: 18.0,
            v_max: 95.0,
            half_width: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu", self.mu),
            ("g", self.g),
            ("a_drive", self.a_drive),
            ("a_brake", self.a_brake),
            ("v_max", self.v_max),
            ("half_width", self.half_width),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "vehicle parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl ConstrainedProblem for MinTimeNlp<'_> {
    fn lower(&self) -> &[f64] {
        MinTimeNlp::lower(self)
    }

    fn upper(&self) -> &[f64] {
        MinTimeNlp::upper(self)
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        MinTimeNlp::evaluate(self, x)
    }

    fn lagrangian_hessian(
        &self,
        x: &[f64],
        obj_factor: f64,
        lambda: &[f64],
    ) -> Vec<(usize, usize, f64)> {
        MinTimeNlp::lagrangian_hessian(self, x, obj_factor, lambda)
    }

    fn ordering(&self) -> Vec<usize> {
        MinTimeNlp::ordering(self)
    }
}

#[derive(Debug, Clone)]
pub struct MinTimeSolution {
    pub offsets: RacelineOffset,
    /// Speed per node (m/s).
    pub speed: Vec<f64>,
    pub lap_time: f64,
    /// Interior-point Newton iterations.
    pub iterations: usize,
    /// Seconds spent inside the solve.
    pub wall_time: f64,
    pub converged: bool,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub trace: Vec<TraceEntry>,
}

/// Optimizes the lap from `seed`. The iteration count is the quantity compared across
/// seeds, so every seed goes through exactly the same configuration.
pub fn solve_min_time(
    track: &TrackModel,
    seed: &RacelineOffset,
    params: &VehicleParams,
    config: &SolverConfig,
) -> Result<MinTimeSolution> {
    let nlp = build_nlp(track, seed, params)?;
    let started = Instant::now();
    let n = track.len();
    let w_scale = nlp.start()[n..].iter().fold(1.0f64, |a, &w| a.max(w));
    let mut scale = vec![1.0; n];
    scale.extend(std::iter::repeat_n(w_scale, n));
    let result = solve_ipm(&nlp, nlp.start(), &scale, config)?;
    let wall_time = started.elapsed().as_secs_f64();
    let (d, w) = result.x.split_at(n);
    Ok(MinTimeSolution {
        offsets: RacelineOffset::new(track, d.to_vec())?,
        speed: w.iter().map(|v| v.sqrt()).collect(),
        lap_time: result.objective,
        iterations: result.iterations,
        wall_time,
        converged: result.converged,
        kkt_residual: result.kkt_residual,
        max_violation: result.max_violation,
        trace: result.trace,
    })
}
