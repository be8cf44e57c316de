//! Racing-line toolkit: arc-length track models, expert raceline reconstruction from
//! telemetry, geometric and learned initialization seeds, and a minimum-time solver whose
//! convergence under each seed is the quantity being benchmarked.

pub mod align;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod net;
pub mod par;
pub mod seeds;
pub mod solver;
pub mod spline;
pub mod synth;

pub use error::{Error, Result};
