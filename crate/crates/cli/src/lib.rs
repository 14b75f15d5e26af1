//! Configuration handling and job dispatch for the `abc-evolution` binary.

pub mod config;
pub mod jobs;

pub use config::{validate_config, ConfigErrors, ConfigIssue, JobConfig, JobKind};
pub use jobs::{run_job, write_artifacts, Artifact, JobError};
