//! Stage orchestration, run configuration and artifact persistence.

pub mod artifact;
pub mod config;
pub mod stages;

pub use artifact::{read_artifact, write_artifact, Provenance};
pub use config::{configuration, Preset, RunConfig, CONFIGURATIONS};
pub use stages::{Pipeline, PlotKind, Stage};
