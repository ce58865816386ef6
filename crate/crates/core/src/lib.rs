//! Downlink performance of distributed massive MIMO with hardware impairments.

pub mod asymptotics;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod geometry;
pub mod oracle;
pub mod performance;
pub mod pilots;
pub mod rng;

pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use performance::{FrameConfig, HardwareProfile, LoArchitecture, MrtEvaluator};
