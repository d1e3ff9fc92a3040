//! Configuration, checkpoints and the command implementations used by the
//! `dpzo` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use commands::{calibrate, eval, prune, schedule, train, CalibrateArgs};
pub use config::ExperimentConfig;
