//! Windowed raceline prediction network: data windows, model, loss, training, weight
//! files and full-lap inference.

pub mod infer;
pub mod io;
pub mod loss;
pub mod model;
pub mod ops;
pub mod train;
pub mod windows;

pub use infer::predict_full_lap;
pub use io::{load_weights, save_weights};
pub use loss::{hybrid_loss, hybrid_loss_grad};
pub use model::{Descriptor, NetWeights};
pub use train::{train, write_curves, EpochStats, TrainConfig, TrainOutcome};
pub use windows::{FeatureStats, TrackFeatures, WindowSample, WindowShape};
