//! Telemetry JSON Lines: one lap object per line,
//! `{"lap_time": 84.2, "flags": {"wet": false, ...}, "points": [[x, y, t], ...]}`.

use std::fs;
use std::path::Path;

use super::TelemetryLap;
use crate::error::{Error, Result};

pub fn parse_telemetry(text: &str) -> std::result::Result<Vec<TelemetryLap>, String> {
    let mut laps = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lap: TelemetryLap = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", k + 1))?;
        lap.validate().map_err(|e| format!("line {}: {e}", k + 1))?;
        laps.push(lap);
    }
    Ok(laps)
}

pub fn read_telemetry(path: &Path) -> Result<Vec<TelemetryLap>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_telemetry(&text).map_err(|m| Error::parse(path, m))
}

pub fn telemetry_to_string(laps: &[TelemetryLap]) -> Result<String> {
    let mut out = String::new();
    for lap in laps {
        out.push_str(&serde_json::to_string(lap)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_telemetry(path: &Path, laps: &[TelemetryLap]) -> Result<()> {
    fs::write(path, telemetry_to_string(laps)?).map_err(|e| Error::io(path, e))
}
