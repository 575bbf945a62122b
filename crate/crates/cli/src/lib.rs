//! Pipeline orchestration for population-scale modal identification:
//! configuration, staged artifacts with manifests, reports and figures.

pub mod artifacts;
pub mod checks;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use artifacts::Workspace;
pub use config::{Ablation, RunConfig, Stage};
pub use error::{CliError, Result};
pub use pipeline::run_pipeline;
