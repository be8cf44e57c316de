//! Synthetic circuits, solver-optimal "expert" lines and simulated telemetry.

pub mod dataset;
pub mod expert;
pub mod telemetry;
pub mod track;

pub use dataset::{build_dataset, load_track, Manifest, ManifestTrack, MANIFEST_FILE};
pub use expert::generate_expert;
pub use telemetry::{simulate_telemetry, TelemetryConfig};
pub use track::{generate_centerline, generate_track, TrackSpec};
