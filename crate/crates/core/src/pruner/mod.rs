//! Iterative magnitude pruning: masks, rewinding and the IMP loop.

mod imp;
mod mask;
mod prune;
pub mod ticket;

use thiserror::Error;

use crate::hnn::HnnError;
use crate::integrator::IntegratorError;
use crate::rgflow::RgFlowError;

pub use imp::{evaluate_network, imp_run, imp_run_observed, PruneSchedule, PruneTrace, StopReason, TraceEntry};
pub use mask::Mask;
pub use prune::{floor_count, magnitude_prune, rewind, PruneOutcome, PruneScope, Rounding};
pub use ticket::{Ticket, TicketError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PruneError {
    #[error("pruning rate must lie in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("density floor must lie in (0, 1), got {0}")]
    InvalidFloor(f64),
    #[error("layer {0} does not exist")]
    LayerOutOfRange(usize),
    #[error("mask does not conform to the network architecture")]
    MaskMismatch,
    #[error(transparent)]
    Train(#[from] HnnError),
    #[error("reference trajectory: {0}")]
    Reference(#[from] IntegratorError),
    #[error(transparent)]
    Flow(#[from] RgFlowError),
}
