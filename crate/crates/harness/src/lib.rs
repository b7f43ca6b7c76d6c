//! Experiment harness: configuration, seeding, pipelines, persistence and
//! run comparison.
//!
//! Seeds: one top-level seed `s` drives everything through
//! `derive_seed(s, label, index)` from the core crate. The network
//! initialization for system `X` (`NLO` or `HH`) uses label `init/X`, index
//! 0, so every experiment on one seed prunes the same network. A fresh
//! initialization for a transfer target `X` uses label `transfer-init/X`.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use artifacts::{ArtifactRecord, Artifacts, RunManifest};
pub use compare::{compare_runs, CompareReport};
pub use config::{parse_config, ConfigError, ExperimentConfig, ExperimentKind, Overrides};
pub use run::{default_output_root, init_seed, run, OUTPUT_ENV};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prune(#[from] ticketlab_core::pruner::PruneError),
    #[error(transparent)]
    Elastic(#[from] ticketlab_core::elastic::ElasticError),
    #[error(transparent)]
    Train(#[from] ticketlab_core::hnn::HnnError),
    #[error(transparent)]
    Flow(#[from] ticketlab_core::rgflow::RgFlowError),
    #[error(transparent)]
    Scaling(#[from] ticketlab_core::scaling::ScalingError),
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("cannot compare runs: {0}")]
    Compare(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
