//! Configuration, checkpoints and the subcommands behind the `sst` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod desk;
pub mod gradcheck;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
