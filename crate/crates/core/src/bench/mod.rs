//! Initialization benchmark: every held-out circuit is optimized from the centerline,
//! minimum-curvature, learned and expert seeds under one solver configuration, and the
//! seeds' lateral deviation from the expert is tabulated.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RacelineOffset, TrackModel};
use crate::net::{predict_full_lap, NetWeights};
use crate::par;
use crate::seeds::{centerline_seed, min_curvature_seed, solver_mc_margin};
use crate::solver::{solve_min_time, SolverConfig, VehicleParams};

pub use report::{emit_report, read_records_csv, ReportFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    CL,
    MC,
    NN,
    GT,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::CL, Strategy::MC, Strategy::NN, Strategy::GT];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::CL => "CL",
            Strategy::MC => "MC",
            Strategy::NN => "NN",
            Strategy::GT => "GT",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CL" => Ok(Strategy::CL),
            "MC" => Ok(Strategy::MC),
            "NN" => Ok(Strategy::NN),
            "GT" => Ok(Strategy::GT),
            _ => Err(Error::InvalidInput(format!("unknown seed strategy {s:?}"))),
        }
    }
}

/// One (circuit, seed) solve. Times in seconds; `lap_time` is `None` when the solve
/// failed outright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub track_id: String,
    pub strategy: Strategy,
    pub iterations: usize,
    pub opt_time: f64,
    pub gen_time: f64,
    pub total_runtime: f64,
    pub lap_time: Option<f64>,
    pub converged: bool,
}

impl BenchRecord {
    /// The record with every wall-clock field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            opt_time: 0.0,
            gen_time: 0.0,
            total_runtime: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEntry {
    pub track_id: String,
    pub strategy: Strategy,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub strategy: Strategy,
    pub rmse: MeanStd,
    pub mae: MeanStd,
}

/// Seed deviation from the expert line, per circuit and aggregated per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub entries: Vec<DeviationEntry>,
    pub aggregate: Vec<DeviationSummary>,
}

impl DeviationReport {
    pub fn from_entries(mut entries: Vec<DeviationEntry>) -> Self {
        entries.sort_by(|a, b| (&a.track_id, a.strategy).cmp(&(&b.track_id, b.strategy)));
        let mut by: BTreeMap<Strategy, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for e in &entries {
            let slot = by.entry(e.strategy).or_default();
            slot.0.push(e.rmse);
            slot.1.push(e.mae);
        }
        let aggregate = by
            .into_iter()
            .filter_map(|(strategy, (r, m))| {
                Some(DeviationSummary {
                    strategy,
                    rmse: MeanStd::of(&r)?,
                    mae: MeanStd::of(&m)?,
                })
            })
            .collect();
        Self { entries, aggregate }
    }

    pub fn entry(&self, track_id: &str, strategy: Strategy) -> Option<&DeviationEntry> {
        self.entries
            .iter()
            .find(|e| e.track_id == track_id && e.strategy == strategy)
    }

    pub fn summary(&self, strategy: Strategy) -> Option<&DeviationSummary> {
        self.aggregate.iter().find(|s| s.strategy == strategy)
    }
}

/// Root-mean-square and mean absolute difference of two offset lines (m).
pub fn rmse_mae(a: &RacelineOffset, b: &RacelineOffset) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty raceline".into()));
    }
    let n = a.len() as f64;
    let (sq, abs) = a
        .offsets
        .iter()
        .zip(&b.offsets)
        .fold((0.0, 0.0), |(sq, abs), (x, y)| (sq + (x - y) * (x - y), abs + (x - y).abs()));
    Ok(((sq / n).sqrt(), abs / n))
}

/// Clearance from the border that the learned seed keeps; the same corridor as the
/// minimum-curvature seed so neither starts on the solver's bounds.
pub fn nn_margin(params: &VehicleParams) -> f64 {
    solver_mc_margin(params.half_width)
}

/// A circuit to benchmark with its expert line.
pub struct BenchTrack<'a> {
    pub id: &'a str,
    pub track: &'a TrackModel,
    pub expert: &'a RacelineOffset,
}

/// Seeds, optimum and convergence history of one circuit, kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRun {
    pub track_id: String,
    pub seeds: BTreeMap<Strategy, Vec<f64>>,
    /// Optimum of the first converged solve, in strategy order.
    pub optimum: Option<Vec<f64>>,
    /// Scaled KKT error per iteration.
    pub traces: BTreeMap<Strategy, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    pub deviation: DeviationReport,
    pub runs: Vec<TrackRun>,
}

impl BenchOutcome {
    pub fn records_of(&self, strategy: Strategy) -> impl Iterator<Item = &BenchRecord> {
        self.records.iter().filter(move |r| r.strategy == strategy)
    }

    pub fn mean_iterations(&self, strategy: Strategy) -> Option<f64> {
        let v: Vec<f64> = self.records_of(strategy).map(|r| r.iterations as f64).collect();
        MeanStd::of(&v).map(|m| m.mean)
    }

    /// Largest per-circuit relative lap-time spread over converged solves.
    pub fn max_lap_time_spread(&self) -> f64 {
        let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.converged) {
            if let Some(t) = r.lap_time {
                by.entry(&r.track_id).or_default().push(t);
            }
        }
        by.values()
            .map(|t| {
                let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) / lo
            })
            .fold(0.0, f64::max)
    }
}

struct Job<'a> {
    track: &'a BenchTrack<'a>,
    strategy: Strategy,
}

struct JobResult {
    record: BenchRecord,
    seed: Option<Vec<f64>>,
    optimum: Option<Vec<f64>>,
    trace: Vec<f64>,
}

fn generate(
    job: &Job<'_>,
    weights: Option<&NetWeights>,
    params: &VehicleParams,
) -> Result<(RacelineOffset, f64)> {
    let track = job.track.track;
    let started = Instant::now();
    let seed = match job.strategy {
        Strategy::CL => centerline_seed(track),
        Strategy::MC => min_curvature_seed(track, solver_mc_margin(params.half_width))?,
        Strategy::NN => {
            let w = weights.ok_or_else(|| Error::InvalidInput("NN strategy needs weights".into()))?;
            predict_full_lap(w, track, nn_margin(params))?
        }
        Strategy::GT => job.track.expert.clone(),
    };
    let elapsed = started.elapsed().as_secs_f64();
    // centerline and expert need no computation
    let gen_time = match job.strategy {
        Strategy::CL | Strategy::GT => 0.0,
        _ => elapsed,
    };
    Ok((seed, gen_time))
}

fn run_job(job: &Job<'_>, weights: Option<&NetWeights>, params: &VehicleParams, config: &SolverConfig) -> JobResult {
    let id = job.track.id.to_string();
    let failed = |gen_time: f64, e: Error| {
        log::warn!("{id} {}: {e}", job.strategy);
        BenchRecord {
            track_id: id.clone(),
            strategy: job.strategy,
            iterations: 0,
            opt_time: 0.0,
            gen_time,
            total_runtime: gen_time,
            lap_time: None,
            converged: false,
        }
    };
    let (seed, gen_time) = match generate(job, weights, params) {
        Ok(s) => s,
        Err(e) => {
            return JobResult {
                record: failed(0.0, e),
                seed: None,
                optimum: None,
                trace: Vec::new(),
            }
        }
    };
    let started = Instant::now();
    let solved = solve_min_time(job.track.track, &seed, params, config);
    let opt_time = started.elapsed().as_secs_f64();
    match solved {
        Ok(sol) => JobResult {
            record: BenchRecord {
                track_id: id.clone(),
                strategy: job.strategy,
                iterations: sol.iterations,
                opt_time,
                gen_time,
                total_runtime: gen_time + opt_time,
                lap_time: Some(sol.lap_time),
                converged: sol.converged,
            },
            trace: sol.trace.iter().map(|t| t.kkt_residual).collect(),
            optimum: sol.converged.then(|| sol.offsets.offsets.clone()),
            seed: Some(seed.offsets),
        },
        Err(e) => JobResult {
            record: failed(gen_time, e),
            seed: Some(seed.offsets),
            optimum: None,
            trace: Vec::new(),
        },
    }
}

/// Runs every `strategies` seed on every circuit. Solver failures are recorded as
/// non-converged and do not stop the run. Records come back sorted by circuit id, then
/// strategy, whatever the scheduling.
pub fn run_benchmark(
    tracks: &[BenchTrack<'_>],
    weights: Option<&NetWeights>,
    strategies: &[Strategy],
    params: &VehicleParams,
    config: &SolverConfig,
) -> Result<BenchOutcome> {
    params.validate()?;
    if tracks.is_empty() || strategies.is_empty() {
        return Err(Error::InvalidInput("nothing to benchmark".into()));
    }
    if strategies.contains(&Strategy::NN) {
        let w = weights.ok_or_else(|| Error::InvalidInput("NN strategy needs weights".into()))?;
        if let Some(t) = tracks.iter().find(|t| w.meta.train_tracks.iter().any(|id| id == t.id)) {
            return Err(Error::InvalidInput(format!(
                "track {} is in the model's training split",
                t.id
            )));
        }
    }
    for t in tracks {
        t.expert.check_matches(t.track)?;
    }
    let mut strategies = strategies.to_vec();
    strategies.sort();
    strategies.dedup();
    let jobs: Vec<Job> = tracks
        .iter()
        .flat_map(|track| strategies.iter().map(move |&strategy| Job { track, strategy }))
        .collect();
    let results = par::map(&jobs, |job| run_job(job, weights, params, config));

    let mut records = Vec::new();
    let mut deviations = Vec::new();
    let mut runs: BTreeMap<String, TrackRun> = BTreeMap::new();
    for (job, result) in jobs.iter().zip(results) {
        let run = runs.entry(job.track.id.to_string()).or_insert_with(|| TrackRun {
            track_id: job.track.id.to_string(),
            seeds: BTreeMap::new(),
            optimum: None,
            traces: BTreeMap::new(),
        });
        if let Some(seed) = result.seed {
            if job.strategy != Strategy::GT {
                let line = RacelineOffset::new(job.track.track, seed.clone())?;
                let (rmse, mae) = rmse_mae(&line, job.track.expert)?;
                deviations.push(DeviationEntry {
                    track_id: job.track.id.to_string(),
                    strategy: job.strategy,
                    rmse,
                    mae,
                });
            }
            run.seeds.insert(job.strategy, seed);
        }
        if run.optimum.is_none() {
            run.optimum = result.optimum;
        }
        run.traces.insert(job.strategy, result.trace);
        records.push(result.record);
    }
    records.sort_by(|a, b| (&a.track_id, a.strategy).cmp(&(&b.track_id, b.strategy)));
    Ok(BenchOutcome {
        records,
        deviation: DeviationReport::from_entries(deviations),
        runs: runs.into_values().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_track, stadium_centerline, TrackOptions};
    use crate::net::{Descriptor, FeatureStats};
    use proptest::prelude::{prop, prop_assert, proptest};

    fn line(v: Vec<f64>) -> RacelineOffset {
        RacelineOffset {
            track_length: v.len() as f64 * 2.0,
            step: 2.0,
            offsets: v,
        }
    }

    #[test]
    fn rmse_mae_defining_cases() {
        let a = line(vec![0.5, -1.0, 2.0, 0.0]);
        assert_eq!(rmse_mae(&a, &a).unwrap(), (0.0, 0.0));
        let b = line(a.offsets.iter().map(|v| v + 1.0).collect());
        let (r, m) = rmse_mae(&a, &b).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && (m - 1.0).abs() < 1e-15);
        // hand computed: differences 3 and -1
        let (r, m) = rmse_mae(&line(vec![3.0, 0.0]), &line(vec![0.0, 1.0])).unwrap();
        assert!((r - 5.0f64.sqrt()).abs() < 1e-15);
        assert!((m - 2.0).abs() < 1e-15);
        assert!(matches!(
            rmse_mae(&a, &line(vec![0.0; 3])),
            Err(Error::CountMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (r, m) = rmse_mae(&line(a), &line(b)).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!(r >= m - 1e-12);
        }
    }

    #[test]
    fn mean_std_sample_convention() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("xx".parse::<Strategy>().is_err());
    }

    fn small_track() -> TrackModel {
        build_track(&stadium_centerline(120.0, 40.0, 6.0, 1.0), &TrackOptions::default()).unwrap()
    }

    fn tiny_weights(train_tracks: Vec<String>) -> NetWeights {
        let d = Descriptor {
            history_len: 8,
            future_len: 12,
            target_len: 4,
            channels: 4,
            hidden: 8,
            heads: 2,
            ..Descriptor::default()
        };
        let mut w = NetWeights::init(&d, FeatureStats::identity(), 3).unwrap();
        w.meta.train_tracks = train_tracks;
        w
    }

    #[test]
    fn records_are_complete_sorted_and_repeatable() {
        let track = small_track();
        let params = VehicleParams::default();
        let config = SolverConfig::default();
        let expert = solve_min_time(&track, &RacelineOffset::zeros(&track), &params, &config).unwrap().offsets;
        let tracks = [
            BenchTrack { id: "b", track: &track, expert: &expert },
            BenchTrack { id: "a", track: &track, expert: &expert },
        ];
        let w = tiny_weights(vec!["z".into()]);
        let out = run_benchmark(&tracks, Some(&w), &Strategy::ALL, &params, &config).unwrap();
        let keys: Vec<(String, Strategy)> = out.records.iter().map(|r| (r.track_id.clone(), r.strategy)).collect();
        let mut expected = Vec::new();
        for id in ["a", "b"] {
            for s in Strategy::ALL {
                expected.push((id.to_string(), s));
            }
        }
        assert_eq!(keys, expected);
        for r in &out.records {
            assert!(r.converged, "{r:?}");
            assert!(r.iterations >= 1);
            assert!((r.total_runtime - r.gen_time - r.opt_time).abs() < 1e-9);
            if matches!(r.strategy, Strategy::CL | Strategy::GT) {
                assert_eq!(r.gen_time, 0.0);
            }
        }
        assert!(out.max_lap_time_spread() < 5e-3);
        for s in [Strategy::CL, Strategy::MC, Strategy::NN] {
            let e = out.deviation.summary(s).unwrap();
            assert!(e.rmse.mean >= e.mae.mean);
        }

        let again = run_benchmark(&tracks, Some(&w), &Strategy::ALL, &params, &config).unwrap();
        let strip = |o: &BenchOutcome| o.records.iter().map(BenchRecord::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&out), strip(&again));
        assert_eq!(out.deviation, again.deviation);
    }

    #[test]
    fn training_tracks_are_refused() {
        let track = small_track();
        let expert = RacelineOffset::zeros(&track);
        let tracks = [BenchTrack { id: "a", track: &track, expert: &expert }];
        let w = tiny_weights(vec!["a".into()]);
        let r = run_benchmark(
            &tracks,
            Some(&w),
            &[Strategy::NN],
            &VehicleParams::default(),
            &SolverConfig::default(),
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let r = run_benchmark(&tracks, None, &[Strategy::NN], &VehicleParams::default(), &SolverConfig::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
