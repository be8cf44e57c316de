//! Benchmark reports: CSV, JSON or Markdown tables, optionally with SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BenchOutcome, BenchRecord, BenchTrack, MeanStd, Strategy, TrackRun};
use crate::error::{Error, Result};
use crate::geometry::{TrackModel, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Md,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "md" | "markdown" => Ok(Self::Md),
            _ => Err(Error::InvalidInput(format!("unknown report format {s:?} (csv, json, md)"))),
        }
    }
}

/// Per-strategy means over converged runs. `gen_time` is absent for seeds that cost
/// nothing to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    pub converged: usize,
    pub iterations: Option<MeanStd>,
    pub opt_time: Option<MeanStd>,
    pub gen_time: Option<MeanStd>,
    pub total_runtime: Option<MeanStd>,
    pub lap_time: Option<MeanStd>,
}

pub fn summarize(records: &[BenchRecord]) -> Vec<StrategySummary> {
    let mut by: BTreeMap<Strategy, Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.strategy).or_default().push(r);
    }
    by.into_iter()
        .map(|(strategy, rs)| {
            let ok: Vec<&&BenchRecord> = rs.iter().filter(|r| r.converged).collect();
            let stat = |f: &dyn Fn(&BenchRecord) -> f64| MeanStd::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            StrategySummary {
                strategy,
                runs: rs.len(),
                converged: ok.len(),
                iterations: stat(&|r| r.iterations as f64),
                opt_time: stat(&|r| r.opt_time),
                gen_time: match strategy {
                    Strategy::CL | Strategy::GT => None,
                    _ => stat(&|r| r.gen_time),
                },
                total_runtime: stat(&|r| r.total_runtime),
                lap_time: stat(&|r| r.lap_time.unwrap_or(f64::NAN)),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a serde_json::Value,
    summary: Vec<StrategySummary>,
    records: &'a [BenchRecord],
    deviation: &'a super::DeviationReport,
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn records_to_csv(records: &[BenchRecord]) -> Result<String> {
    Ok(String::from_utf8(csv_bytes(records)?).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> std::result::Result<Vec<BenchRecord>, String> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    records_from_csv(&text).map_err(|m| Error::parse(path, m))
}

fn cell(m: Option<MeanStd>, digits: usize) -> String {
    match m {
        Some(m) => format!("{:.*} ± {:.*}", digits, m.mean, digits, m.std),
        None => "--".to_string(),
    }
}

fn markdown(outcome: &BenchOutcome, config: &serde_json::Value) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "# Initialization benchmark\n");
    let _ = writeln!(
        s,
        "| Strategy | Converged | Iter. | Opt. Time (s) | Gen. Time (s) | Total Runtime (s) | Lap Time (s) |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for m in summarize(&outcome.records) {
        let _ = writeln!(
            s,
            "| {} | {}/{} | {} | {} | {} | {} | {} |",
            m.strategy,
            m.converged,
            m.runs,
            cell(m.iterations, 1),
            cell(m.opt_time, 3),
            cell(m.gen_time, 3),
            cell(m.total_runtime, 3),
            cell(m.lap_time, 3)
        );
    }
    let _ = writeln!(
        s,
        "\nMeans ± sample standard deviation over converged runs. CL and GT seeds cost nothing \
         to generate. MC generation is one sparse QP here, far cheaper than iterative \
         minimum-curvature pipelines, so its generation time is not comparable to theirs.\n"
    );
    let _ = writeln!(s, "## Seed deviation from the expert line\n");
    let _ = writeln!(s, "| Strategy | RMSE (m) | MAE (m) |");
    let _ = writeln!(s, "|---|---|---|");
    for a in &outcome.deviation.aggregate {
        let _ = writeln!(s, "| {} | {} | {} |", a.strategy, cell(Some(a.rmse), 3), cell(Some(a.mae), 3));
    }
    let _ = writeln!(s, "\n## Per track\n");
    let _ = writeln!(s, "| Track | Strategy | Iter. | Opt. Time (s) | Gen. Time (s) | Lap Time (s) | Converged | RMSE (m) | MAE (m) |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for r in &outcome.records {
        let dev = outcome.deviation.entry(&r.track_id, r.strategy);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3} | {:.3} | {} | {} | {} | {} |",
            r.track_id,
            r.strategy,
            r.iterations,
            r.opt_time,
            r.gen_time,
            r.lap_time.map_or("--".into(), |t| format!("{t:.3}")),
            if r.converged { "yes" } else { "no" },
            dev.map_or("--".into(), |d| format!("{:.3}", d.rmse)),
            dev.map_or("--".into(), |d| format!("{:.3}", d.mae)),
        );
    }
    let _ = writeln!(s, "\n## Configuration\n\n```json\n{}\n```", serde_json::to_string_pretty(config)?);
    Ok(s)
}

/// Writes the report for `outcome` into `out_dir` and returns the files written. With
/// `plot_tracks`, also draws an overlay of every circuit's seeds and optimum and a chart
/// of each solve's KKT error.
pub fn emit_report(
    outcome: &BenchOutcome,
    format: ReportFormat,
    plot_tracks: Option<&[BenchTrack<'_>]>,
    config: &serde_json::Value,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if outcome.records.is_empty() {
        return Err(Error::InvalidInput(
            "no benchmark records to report; run `bench` first".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            written.push(write(out_dir.join("records.csv"), records_to_csv(&outcome.records)?)?);
            written.push(write(out_dir.join("deviation.csv"), csv_bytes(&outcome.deviation.entries)?)?);
            let mut json = serde_json::to_string_pretty(config)?;
            json.push('\n');
            written.push(write(out_dir.join("config.json"), json)?);
        }
        ReportFormat::Json => {
            let mut json = serde_json::to_string_pretty(&JsonReport {
                config,
                summary: summarize(&outcome.records),
                records: &outcome.records,
                deviation: &outcome.deviation,
            })?;
            json.push('\n');
            written.push(write(out_dir.join("report.json"), json)?);
        }
        ReportFormat::Md => written.push(write(out_dir.join("report.md"), markdown(outcome, config)?)?),
    }
    if let Some(tracks) = plot_tracks {
        let dir = out_dir.join("plots");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for run in &outcome.runs {
            let Some(t) = tracks.iter().find(|t| t.id == run.track_id) else {
                continue;
            };
            written.push(write(dir.join(format!("{}_overlay.svg", run.track_id)), overlay_svg(t.track, run))?);
            written.push(write(dir.join(format!("{}_convergence.svg", run.track_id)), convergence_svg(run))?);
        }
    }
    Ok(written)
}

fn color(s: Strategy) -> &'static str {
    match s {
        Strategy::CL => "#7f7f7f",
        Strategy::MC => "#1f77b4",
        Strategy::NN => "#d62728",
        Strategy::GT => "#2ca02c",
    }
}

fn polyline(points: &[Vec2], map: &dyn Fn(Vec2) -> (f64, f64), stroke: &str, width: f64, closed: bool) -> String {
    let mut d = String::new();
    for p in points.iter().chain(closed.then_some(&points[0])) {
        let (x, y) = map(*p);
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    format!("<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>\n", d.trim_end())
}

fn offset_path(track: &TrackModel, d: &[f64]) -> Vec<Vec2> {
    track
        .points()
        .iter()
        .zip(track.normals())
        .zip(d)
        .map(|((p, n), d)| p + n * *d)
        .collect()
}

fn legend(entries: &[(&str, &str)], x: f64) -> String {
    let mut s = String::new();
    for (i, (label, c)) in entries.iter().enumerate() {
        let y = 20.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{c}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\" font-size=\"12\">{label}</text>",
            x + 20.0,
            x + 25.0,
            y + 4.0
        );
    }
    s
}

fn overlay_svg(track: &TrackModel, run: &TrackRun) -> String {
    let (w, h, pad) = (900.0, 700.0, 20.0);
    let left: Vec<Vec2> = offset_path(track, track.border_left());
    let right: Vec<Vec2> = offset_path(track, &track.border_right().iter().map(|b| -b).collect::<Vec<_>>());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in left.iter().chain(&right) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = ((w - 2.0 * pad) / (hi[0] - lo[0])).min((h - 2.0 * pad) / (hi[1] - lo[1]));
    let map = |p: Vec2| (pad + (p[0] - lo[0]) * scale, h - pad - (p[1] - lo[1]) * scale);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s += &polyline(&left, &map, "black", 1.0, true);
    s += &polyline(&right, &map, "black", 1.0, true);
    s += &polyline(track.points(), &map, "#bbbbbb", 0.8, true);
    let mut keys = vec![("border", "black")];
    for (strategy, d) in &run.seeds {
        if *strategy == Strategy::CL {
            continue;
        }
        s += &polyline(&offset_path(track, d), &map, color(*strategy), 1.0, true);
        keys.push((strategy.as_str(), color(*strategy)));
    }
    if let Some(d) = &run.optimum {
        s += &polyline(&offset_path(track, d), &map, "#ff7f0e", 1.6, true);
        keys.push(("optimum", "#ff7f0e"));
    }
    s += &legend(&keys, w - 130.0);
    s += &format!("<text x=\"{pad}\" y=\"{}\" font-size=\"14\">{}</text>\n</svg>\n", pad, run.track_id);
    s
}

fn convergence_svg(run: &TrackRun) -> String {
    let (w, h, pad) = (700.0, 420.0, 50.0);
    let logs: Vec<(Strategy, Vec<f64>)> = run
        .traces
        .iter()
        .map(|(s, t)| (*s, t.iter().map(|v| v.max(1e-16).log10()).collect()))
        .collect();
    let n = logs.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2) as f64;
    let all = logs.iter().flat_map(|(_, v)| v.iter().cloned());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.floor(), hi.ceil().max(lo.floor() + 1.0)) } else { (-8.0, 0.0) };
    let map = |p: Vec2| {
        (
            pad + p[0] / (n - 1.0) * (w - 2.0 * pad),
            h - pad - (p[1] - lo) / (hi - lo) * (h - 2.0 * pad),
        )
    };
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let mut e = lo;
    while e <= hi {
        let (_, y) = map(Vec2::new(0.0, e));
        let _ = writeln!(s, "<text x=\"5\" y=\"{:.1}\" font-size=\"11\">1e{}</text>", y + 4.0, e as i64);
        e += 1.0;
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">iteration (0..{})</text>",
        w / 2.0 - 40.0,
        h - 15.0,
        n as usize - 1
    );
    let mut keys = Vec::new();
    for (strategy, v) in &logs {
        if v.is_empty() {
            continue;
        }
        let pts: Vec<Vec2> = v.iter().enumerate().map(|(i, y)| Vec2::new(i as f64, *y)).collect();
        s += &polyline(&pts, &map, color(*strategy), 1.2, false);
        keys.push((strategy.as_str(), color(*strategy)));
    }
    s += &legend(&keys, w - 110.0);
    s += &format!("<text x=\"{pad}\" y=\"30\" font-size=\"14\">{} scaled KKT error</text>\n</svg>\n", run.track_id);
    s
}
