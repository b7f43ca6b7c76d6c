//! Hamiltonian network solvers: architecture, systems, ansatz, residual
//! losses and masked Adam training.

mod arch;
pub mod batch;
mod system;
pub mod tape_net;
mod train;

use thiserror::Error;

use crate::diffengine::TapeError;

pub use arch::{ArchSpec, Layout, NetworkParams};
pub use system::{Dynamics, SystemKind, SystemSpec};
pub use tape_net::{apply_ansatz, collocation_grid, residual_loss_tape, tape_loss_and_gradient, TapeNetwork};
pub use train::{predict_trajectory, train, Adam, Checkpoint, GradientBackend, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HnnError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} parameters, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("mask does not conform to the network architecture")]
    MaskMismatch,
    #[error("network has {outputs} outputs but the system has dimension {dim}")]
    SystemMismatch { outputs: usize, dim: usize },
    #[error("collocation grid is empty")]
    EmptyGrid,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
}
