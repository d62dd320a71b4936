//! Multimodal trajectory forecasting with temporal and spatial consistency training.

pub mod augment;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod prediction;
pub mod predictor;
pub mod scenario;

pub use error::{Error, Result};
pub use geometry::{Frame, Trajectory, Waypoint};
pub use prediction::{PredictionSet, TargetSet};
