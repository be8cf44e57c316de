//! Dataset builder: track, expert and telemetry files per circuit plus a JSON manifest.
//!
//! Layout of `out_dir`:
//!
//! ```text
//! manifest.json
//! <id>_track.csv        # x_m,y_m,w_tr_right_m,w_tr_left_m
//! <id>_expert.csv       # s_m,d_m
//! <id>_telemetry.jsonl  one lap per line
//! ```
//!
//! The manifest lists every accepted circuit with its seed, sample count, step, length,
//! expert lap time and the misalignment applied to its telemetry, plus the excluded seeds
//! with the reason. It contains no wall-clock values, so rebuilding with the same inputs
//! reproduces every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expert::generate_expert;
use super::telemetry::{simulate_telemetry, TelemetryConfig};
use super::track::{generate_track, TrackSpec};
use crate::align::io::telemetry_to_string;
use crate::align::AlignmentTransform;
use crate::error::{Error, Result};
use crate::geometry::io::{centerline_from_str, centerline_to_string, raceline_to_string, read_raceline, read_track};
use crate::geometry::{build_track, RacelineOffset, TrackModel, TrackOptions};
use crate::par;
use crate::seeds::DEFAULT_MC_MARGIN;
use crate::solver::{SolverConfig, VehicleParams};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

const NOTE: &str = "Synthetic circuits. Expert lines are the minimum-time solver's own optimum \
    (started from the minimum-curvature line), so expert and optimal coincide, unlike real \
    driver lines.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrack {
    pub id: String,
    pub seed: u64,
    pub track_file: String,
    pub expert_file: String,
    pub telemetry_file: String,
    pub samples: usize,
    pub step: f64,
    pub length: f64,
    pub expert_lap_time: f64,
    /// Transform that registration should recover from the telemetry.
    pub transform: AlignmentTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTrack {
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub note: String,
    pub step: f64,
    pub vehicle: VehicleParams,
    pub solver: SolverConfig,
    pub telemetry: TelemetryConfig,
    pub tracks: Vec<ManifestTrack>,
    pub excluded: Vec<ExcludedTrack>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::parse(
                path,
                format!("manifest version {} (expected {MANIFEST_VERSION})", manifest.version),
            ));
        }
        Ok(manifest)
    }

    pub fn track(&self, id: &str) -> Option<&ManifestTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn track_options(&self) -> TrackOptions {
        TrackOptions {
            step: self.step,
            ..TrackOptions::default()
        }
    }
}

/// A manifest entry with its files loaded.
pub struct DatasetTrack {
    pub entry: ManifestTrack,
    pub track: TrackModel,
    pub expert: RacelineOffset,
}

/// Loads one circuit of a dataset directory.
pub fn load_track(dir: &Path, manifest: &Manifest, entry: &ManifestTrack) -> Result<DatasetTrack> {
    let track = read_track(&dir.join(&entry.track_file), &manifest.track_options())?;
    if track.len() != entry.samples {
        return Err(Error::CountMismatch {
            expected: entry.samples,
            actual: track.len(),
        });
    }
    let expert = read_raceline(&dir.join(&entry.expert_file), &track)?;
    Ok(DatasetTrack {
        entry: entry.clone(),
        track,
        expert,
    })
}

/// Misalignment applied to a circuit's telemetry: `theta` in `[0, 2 pi)`, `|t| <= 50 m`,
/// `sigma` in `[0.9, 1.1]`.
pub fn random_transform(rng: &mut impl Rng) -> AlignmentTransform {
    let radius = 50.0 * rng.random::<f64>().sqrt();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    AlignmentTransform {
        theta: rng.random_range(0.0..std::f64::consts::TAU),
        t: [radius * angle.cos(), radius * angle.sin()],
        sigma: rng.random_range(0.9..=1.1),
        loss: 0.0,
    }
}

struct Built {
    entry: ManifestTrack,
    track_csv: String,
    expert_csv: String,
    telemetry: String,
}

fn build_one(
    spec: &TrackSpec,
    options: &TrackOptions,
    params: &VehicleParams,
    solver: &SolverConfig,
    telemetry: &TelemetryConfig,
) -> Result<Built> {
    let generated = generate_track(spec)?;
    // the expert is solved on the track exactly as it will be re-read from disk
    let track_csv = centerline_to_string(&generated.to_raw());
    let raw = centerline_from_str(&track_csv).map_err(Error::InvalidInput)?;
    let track = build_track(&raw, options)?;
    let expert = generate_expert(&track, params, solver)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_7E1E);
    let transform = random_transform(&mut rng);
    let config = TelemetryConfig {
        seed: rng.random(),
        ..*telemetry
    };
    let laps = simulate_telemetry(&track, &expert.offsets, &expert.speed, &transform, &config)?;
    let id = format!("synth_{:04}", spec.seed);
    Ok(Built {
        entry: ManifestTrack {
            track_file: format!("{id}_track.csv"),
            expert_file: format!("{id}_expert.csv"),
            telemetry_file: format!("{id}_telemetry.jsonl"),
            id,
            seed: spec.seed,
            samples: track.len(),
            step: track.step(),
            length: track.length(),
            expert_lap_time: expert.lap_time,
            transform,
        },
        track_csv,
        expert_csv: raceline_to_string(&expert.offsets),
        telemetry: telemetry_to_string(&laps)?,
    })
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Generates every circuit (in parallel), then writes files and the manifest in spec order.
/// Circuits whose generation or expert solve fails are listed as excluded.
pub fn build_dataset(
    specs: &[TrackSpec],
    options: &TrackOptions,
    params: &VehicleParams,
    solver: &SolverConfig,
    telemetry: &TelemetryConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    params.validate()?;
    for spec in specs {
        spec.validate(params.half_width, DEFAULT_MC_MARGIN)?;
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = specs.iter().find(|s| !seen.insert(s.seed)) {
        return Err(Error::InvalidInput(format!("duplicate track seed {}", dup.seed)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = par::map(specs, |spec| build_one(spec, options, params, solver, telemetry));
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        note: NOTE.to_string(),
        step: options.step,
        vehicle: *params,
        solver: *solver,
        telemetry: *telemetry,
        tracks: Vec::new(),
        excluded: Vec::new(),
    };
    for (spec, result) in specs.iter().zip(results) {
        match result {
            Ok(built) => {
                write(out_dir.join(&built.entry.track_file), &built.track_csv)?;
                write(out_dir.join(&built.entry.expert_file), &built.expert_csv)?;
                write(out_dir.join(&built.entry.telemetry_file), &built.telemetry)?;
                manifest.tracks.push(built.entry);
            }
            Err(e) => {
                warn!("track seed {} excluded: {e}", spec.seed);
                manifest.excluded.push(ExcludedTrack {
                    seed: spec.seed,
                    reason: e.to_string(),
                });
            }
        }
    }
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write(out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}
