use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use raceline_core::align::io::read_telemetry;
use raceline_core::align::reconstruct_expert;
use raceline_core::bench::{emit_report, nn_margin, run_benchmark, BenchOutcome, BenchTrack, Strategy};
use raceline_core::geometry::io::{read_raceline, read_track, write_raceline};
use raceline_core::geometry::{RacelineOffset, TrackModel};
use raceline_core::net::{load_weights, predict_full_lap, save_weights, train, write_curves, NetWeights};
use raceline_core::seeds::{centerline_seed, min_curvature_seed, solver_mc_margin};
use raceline_core::solver::io::{write_solution, write_trace};
use raceline_core::solver::solve_min_time;
use raceline_core::synth::dataset::DatasetTrack;
use raceline_core::synth::{build_dataset, load_track, Manifest, MANIFEST_FILE};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{apply, Config};
use crate::error::CliError;
use crate::{
    AlignArgs, BenchArgs, Cli, Command, GenDatasetArgs, OptimizeArgs, PredictArgs, ReportArgs, SeedArgs, SeedKind,
    TrainArgs,
};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CURVES_FILE: &str = "curves.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const BENCH_FILE: &str = "bench.json";

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.load_config()?;
    match cli.command {
        Command::GenDataset(a) => gen_dataset(config, a),
        Command::Align(a) => align(config, a),
        Command::Seed(a) => seed(config, a),
        Command::Optimize(a) => optimize(config, a),
        Command::Train(a) => train_cmd(config, a),
        Command::Predict(a) => predict(config, a),
        Command::Bench(a) => bench(config, a),
        Command::Report(a) => report(a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(raceline_core::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Prints a one-object JSON summary on stdout.
fn summary(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("summary serializes"));
}

fn load_model_track(config: &Config, path: &Path) -> Result<TrackModel, CliError> {
    Ok(read_track(path, &config.dataset.track_options())?)
}

fn gen_dataset(mut config: Config, a: GenDatasetArgs) -> Result<(), CliError> {
    apply(&mut config.dataset.tracks, a.tracks);
    apply(&mut config.dataset.first_seed, a.first_seed);
    apply(&mut config.telemetry.laps, a.laps);
    apply(&mut config.telemetry.noise, a.noise);
    let manifest = build_dataset(
        &config.dataset.specs(),
        &config.dataset.track_options(),
        &config.vehicle,
        &config.solver,
        &config.telemetry,
        &a.out,
    )?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;
    if manifest.tracks.is_empty() {
        return Err(CliError::Solver("every circuit was excluded".into()));
    }
    summary(json!({
        "tracks": manifest.tracks.len(),
        "excluded": manifest.excluded.len(),
        "manifest": a.out.join(MANIFEST_FILE),
    }));
    Ok(())
}

fn align(config: Config, a: AlignArgs) -> Result<(), CliError> {
    let track = load_model_track(&config, &a.track)?;
    let laps = read_telemetry(&a.telemetry)?;
    let rec = reconstruct_expert(&laps, &track, &config.align)?;
    write_raceline(&a.out, &rec.line)?;
    summary(json!({
        "laps_used": rec.laps_used,
        "transform": rec.transform,
        "config": config.align,
    }));
    Ok(())
}

fn load_weights_for(path: &Path) -> Result<NetWeights, CliError> {
    Ok(load_weights(path, None)?)
}

fn seed(config: Config, a: SeedArgs) -> Result<(), CliError> {
    let track = load_model_track(&config, &a.track)?;
    let margin = a.margin.unwrap_or_else(|| solver_mc_margin(config.vehicle.half_width));
    let started = Instant::now();
    let line = match a.kind {
        SeedKind::Cl => centerline_seed(&track),
        SeedKind::Mc => min_curvature_seed(&track, margin)?,
        SeedKind::Nn => {
            let path = a
                .weights
                .as_ref()
                .ok_or_else(|| CliError::Usage("`seed nn` needs --weights".into()))?;
            predict_full_lap(&load_weights_for(path)?, &track, margin)?
        }
    };
    let gen_time = started.elapsed().as_secs_f64();
    write_raceline(&a.out, &line)?;
    summary(json!({ "samples": line.len(), "margin": margin, "gen_time": gen_time }));
    Ok(())
}

fn optimize(mut config: Config, a: OptimizeArgs) -> Result<(), CliError> {
    apply(&mut config.solver.max_iterations, a.max_iterations);
    let track = load_model_track(&config, &a.track)?;
    let seed = match &a.seed_line {
        Some(p) => read_raceline(p, &track)?,
        None => RacelineOffset::zeros(&track),
    };
    let sol = solve_min_time(&track, &seed, &config.vehicle, &config.solver)?;
    write_solution(&a.out, &sol)?;
    if let Some(p) = &a.trace {
        write_trace(p, &sol.trace)?;
    }
    summary(json!({
        "converged": sol.converged,
        "iterations": sol.iterations,
        "lap_time": sol.lap_time,
        "kkt_residual": sol.kkt_residual,
        "wall_time": sol.wall_time,
        "vehicle": config.vehicle,
        "solver": config.solver,
    }));
    if !sol.converged {
        return Err(CliError::Solver(format!(
            "no convergence in {} iterations (KKT error {:.3e}); best iterate written",
            sol.iterations, sol.kkt_residual
        )));
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<DatasetTrack>), CliError> {
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let tracks = manifest
        .tracks
        .iter()
        .map(|e| load_track(dir, &manifest, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, tracks))
}

fn train_cmd(mut config: Config, a: TrainArgs) -> Result<(), CliError> {
    apply(&mut config.train.epochs, a.epochs);
    apply(&mut config.dataset.holdout, a.holdout);
    apply(&mut config.train.seed, a.seed);
    let (manifest, tracks) = load_dataset(&a.dataset)?;
    let (train_ids, test_ids) = config.dataset.split(&manifest)?;
    let data: Vec<(TrackModel, RacelineOffset)> = tracks
        .iter()
        .filter(|t| train_ids.contains(&t.entry.id))
        .map(|t| (t.track.clone(), t.expert.clone()))
        .collect();
    let split_id = format!("holdout-{}-of-{}", test_ids.len(), manifest.tracks.len());
    let started = Instant::now();
    let mut outcome = train(&data, &config.train, &split_id)?;
    outcome.weights.meta.train_tracks = train_ids.clone();
    create_dir(&a.out)?;
    save_weights(&a.out.join(WEIGHTS_FILE), &outcome.weights)?;
    write_curves(&a.out.join(CURVES_FILE), &outcome.curves)?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;
    summary(json!({
        "train_tracks": train_ids,
        "held_out": test_ids,
        "epochs": outcome.curves.len(),
        "best_epoch": outcome.best_epoch,
        "diverged_at": outcome.diverged_at,
        "wall_time": started.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn predict(config: Config, a: PredictArgs) -> Result<(), CliError> {
    let track = load_model_track(&config, &a.track)?;
    let weights = load_weights_for(&a.weights)?;
    let started = Instant::now();
    let line = predict_full_lap(&weights, &track, nn_margin(&config.vehicle))?;
    let gen_time = started.elapsed().as_secs_f64();
    write_raceline(&a.out, &line)?;
    summary(json!({ "samples": line.len(), "gen_time": gen_time }));
    Ok(())
}

/// Everything `report` needs to re-render a benchmark.
#[derive(Serialize, Deserialize)]
pub struct SavedBench {
    pub config: serde_json::Value,
    pub outcome: BenchOutcome,
}

fn bench(mut config: Config, a: BenchArgs) -> Result<(), CliError> {
    apply(&mut config.dataset.holdout, a.holdout);
    let (manifest, tracks) = load_dataset(&a.dataset)?;
    let weights = a.weights.as_deref().map(load_weights_for).transpose()?;
    let (_, test_ids) = config.dataset.split(&manifest)?;
    let held: Vec<BenchTrack> = tracks
        .iter()
        .filter(|t| test_ids.contains(&t.entry.id))
        .map(|t| BenchTrack {
            id: &t.entry.id,
            track: &t.track,
            expert: &t.expert,
        })
        .collect();
    if held.is_empty() {
        return Err(CliError::Usage("no held-out circuits to benchmark; raise --holdout".into()));
    }
    let strategies: Vec<Strategy> = Strategy::ALL
        .into_iter()
        .filter(|s| *s != Strategy::NN || weights.is_some())
        .collect();
    let outcome = run_benchmark(&held, weights.as_ref(), &strategies, &config.vehicle, &config.solver)?;
    create_dir(&a.out)?;
    let provenance = json!({
        "config": config.to_json(),
        "dataset": a.dataset,
        "weights": a.weights,
        "model_split": weights.as_ref().map(|w| w.meta.split_id.clone()),
    });
    write_json(
        &a.out.join(BENCH_FILE),
        &SavedBench {
            config: provenance.clone(),
            outcome: outcome.clone(),
        },
    )?;
    let files = emit_report(&outcome, a.format.into(), a.plot.then_some(&held[..]), &provenance, &a.out)?;
    let failed = outcome.records.iter().filter(|r| !r.converged).count();
    summary(json!({
        "tracks": held.len(),
        "records": outcome.records.len(),
        "failed": failed,
        "files": files,
    }));
    if failed > 0 {
        return Err(CliError::Solver(format!("{failed} solves did not converge")));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let saved: SavedBench =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let loaded = match (&a.dataset, a.plot) {
        (Some(dir), true) => Some(load_dataset(dir)?.1),
        _ => None,
    };
    let plot_tracks: Option<Vec<BenchTrack>> = loaded.as_ref().map(|ts| {
        ts.iter()
            .map(|t| BenchTrack {
                id: &t.entry.id,
                track: &t.track,
                expert: &t.expert,
            })
            .collect()
    });
    let files: Vec<PathBuf> = emit_report(
        &saved.outcome,
        a.format.into(),
        plot_tracks.as_deref(),
        &saved.config,
        &a.out,
    )?;
    summary(json!({ "files": files }));
    Ok(())
}
