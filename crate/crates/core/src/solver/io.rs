use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MinTimeSolution, TraceEntry};
use crate::error::{Error, Result};

pub const SOLUTION_HEADER: &str = "# s_m,d_m,v_mps";

pub fn solution_to_string(solution: &MinTimeSolution) -> String {
    let mut out = String::new();
    out.push_str(SOLUTION_HEADER);
    out.push('\n');
    let step = solution.offsets.step;
    for (i, (d, v)) in solution.offsets.offsets.iter().zip(&solution.speed).enumerate() {
        let _ = writeln!(out, "{},{},{}", i as f64 * step, d, v);
    }
    out
}

pub fn write_solution(path: &Path, solution: &MinTimeSolution) -> Result<()> {
    fs::write(path, solution_to_string(solution)).map_err(|e| Error::io(path, e))
}

/// Per-iteration objective, KKT residual (filled at subproblem ends) and step norm.
pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(trace)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
