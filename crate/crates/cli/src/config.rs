//! Layered configuration: built-in defaults, overridden by a TOML file, overridden by
//! command-line flags.

use std::fs;
use std::path::Path;

use raceline_core::align::AlignConfig;
use raceline_core::geometry::{TrackOptions, DEFAULT_STEP};
use raceline_core::net::TrainConfig;
use raceline_core::solver::{SolverConfig, VehicleParams};
use raceline_core::synth::{Manifest, TelemetryConfig, TrackSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "RACELINE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Circuits to generate.
    pub tracks: usize,
    /// Seed of the first circuit; the others follow consecutively.
    pub first_seed: u64,
    /// Circuits held out from training (the last ones in manifest order).
    pub holdout: usize,
    pub step: f64,
    /// Template for every circuit; its seed is replaced.
    pub track: TrackSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tracks: 17,
            first_seed: 1,
            holdout: 3,
            step: DEFAULT_STEP,
            track: TrackSpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn specs(&self) -> Vec<TrackSpec> {
        (0..self.tracks as u64)
            .map(|i| TrackSpec {
                seed: self.first_seed + i,
                ..self.track.clone()
            })
            .collect()
    }

    pub fn track_options(&self) -> TrackOptions {
        TrackOptions {
            step: self.step,
            ..TrackOptions::default()
        }
    }

    /// Training and held-out ids of a dataset.
    pub fn split(&self, manifest: &Manifest) -> Result<(Vec<String>, Vec<String>), CliError> {
        let n = manifest.tracks.len();
        if self.holdout >= n {
            return Err(CliError::Usage(format!(
                "holdout {} leaves no training circuits out of {n}",
                self.holdout
            )));
        }
        let ids: Vec<String> = manifest.tracks.iter().map(|t| t.id.clone()).collect();
        let (train, test) = ids.split_at(n - self.holdout);
        Ok((train.to_vec(), test.to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub vehicle: VehicleParams,
    pub solver: SolverConfig,
    pub telemetry: TelemetryConfig,
    pub align: AlignConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Defaults overlaid with the file at `path`, if any. An unreadable or malformed file
    /// is a usage error.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Sets `target` from a flag when the flag was given.
pub fn apply<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = Config::from_toml("[solver]\nmax_iterations = 7\n[train.descriptor]\nchannels = 8\n").unwrap();
        assert_eq!(c.solver.max_iterations, 7);
        assert_eq!(c.solver.kkt_tol, SolverConfig::default().kkt_tol);
        assert_eq!(c.train.descriptor.channels, 8);
        assert_eq!(c.train.epochs, TrainConfig::default().epochs);
        assert_eq!(c.dataset, DatasetConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[solver]\nmax_iter = 7\n").is_err());
        assert!(Config::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn flags_override() {
        let mut c = Config::default();
        apply(&mut c.train.epochs, Some(3));
        apply(&mut c.train.seed, None);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.seed, 0);
    }

    #[test]
    fn specs_are_consecutive() {
        let d = DatasetConfig {
            tracks: 3,
            first_seed: 10,
            ..DatasetConfig::default()
        };
        let seeds: Vec<u64> = d.specs().iter().map(|s| s.seed).collect();
        assert_eq!(seeds, [10, 11, 12]);
    }
}
