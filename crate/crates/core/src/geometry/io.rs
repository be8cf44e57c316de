//! Centerline and raceline CSV files.
//!
//! Track files follow the TUM racetrack-database layout (`# x_m,y_m,w_tr_right_m,w_tr_left_m`);
//! raceline files hold `# s_m,d_m`. Values are written with the shortest round-trip
//! representation so re-serialization is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{build_track, RacelineOffset, RawCenterlinePoint, TrackModel, TrackOptions};
use crate::error::{Error, Result};

pub const TRACK_HEADER: &str = "# x_m,y_m,w_tr_right_m,w_tr_left_m";
pub const RACELINE_HEADER: &str = "# s_m,d_m";

fn read_rows(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rows(&text, columns).map_err(|m| Error::parse(path, m))
}

pub(crate) fn parse_rows(text: &str, columns: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != columns {
            return Err(format!(
                "row {}: expected {columns} columns, got {}",
                line + 1,
                record.len()
            ));
        }
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: {e}", line + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_centerline(path: &Path) -> Result<Vec<RawCenterlinePoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    centerline_from_str(&text).map_err(|m| Error::parse(path, m))
}

/// Parses centerline CSV text (same layout as the files).
pub fn centerline_from_str(text: &str) -> std::result::Result<Vec<RawCenterlinePoint>, String> {
    Ok(parse_rows(text, 4)?
        .into_iter()
        .map(|r| RawCenterlinePoint {
            x: r[0],
            y: r[1],
            w_right: r[2],
            w_left: r[3],
        })
        .collect())
}

/// Reads a track file and builds its arc-length model.
pub fn read_track(path: &Path, options: &TrackOptions) -> Result<TrackModel> {
    build_track(&read_centerline(path)?, options)
}

pub fn centerline_to_string(rows: &[RawCenterlinePoint]) -> String {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(TRACK_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.x, r.y, r.w_right, r.w_left);
    }
    out
}

pub fn write_track(path: &Path, track: &TrackModel) -> Result<()> {
    fs::write(path, centerline_to_string(&track.to_raw())).map_err(|e| Error::io(path, e))
}

pub fn raceline_to_string(line: &RacelineOffset) -> String {
    let mut out = String::with_capacity(line.len() * 32);
    out.push_str(RACELINE_HEADER);
    out.push('\n');
    for (i, d) in line.offsets.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i as f64 * line.step, d);
    }
    out
}

pub fn write_raceline(path: &Path, line: &RacelineOffset) -> Result<()> {
    fs::write(path, raceline_to_string(line)).map_err(|e| Error::io(path, e))
}

/// Reads a raceline file and checks it against the track grid.
pub fn read_raceline(path: &Path, track: &TrackModel) -> Result<RacelineOffset> {
    let rows = read_rows(path, 2)?;
    let offsets = rows.iter().map(|r| r[1]).collect();
    RacelineOffset::new(track, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, circle_centerline, TrackOptions};

    #[test]
    fn raceline_file_round_trips_bytes() {
        let track =
            build_track(&circle_centerline(40.0, 4.0, 4.0, 200, false), &TrackOptions::default())
                .unwrap();
        let offsets = (0..track.len()).map(|i| (i as f64 * 0.37).sin() * 3.1).collect();
        let line = RacelineOffset::new(&track, offsets).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("line.csv");
        write_raceline(&path, &line).unwrap();
        let first = fs::read(&path).unwrap();
        let back = read_raceline(&path, &track).unwrap();
        assert_eq!(back.offsets, line.offsets);
        write_raceline(&path, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn track_file_reingests() {
        let track =
            build_track(&circle_centerline(40.0, 4.0, 3.0, 200, false), &TrackOptions::default())
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("track.csv");
        write_track(&path, &track).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(TRACK_HEADER));
        let again = build_track(&read_centerline(&path).unwrap(), &TrackOptions::default()).unwrap();
        assert_eq!(again.len(), track.len());
        assert_eq!(again.border_right()[0], 4.0);
    }

    #[test]
    fn malformed_rows_are_reported() {
        assert!(parse_rows("# h\n1,2,3\n", 4).is_err());
        assert!(parse_rows("1,2,x,4\n", 4).is_err());
        assert_eq!(parse_rows("# h\n1, 2, 3, 4\n", 4).unwrap()[0], vec![1.0, 2.0, 3.0, 4.0]);
    }
}
