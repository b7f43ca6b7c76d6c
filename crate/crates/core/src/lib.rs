//! Lottery tickets in Hamiltonian neural network ODE solvers.
//!
//! The crate is generic over the floating point type through [`Scalar`];
//! the aliases at the bottom fix the common `f64` instantiations.

pub mod diffengine;
pub mod elastic;
pub mod hnn;
pub mod integrator;
pub mod pruner;
pub mod rgflow;
pub mod scaling;
pub mod scalar;
pub mod seed;

pub use diffengine::{finite_difference_gradient, GradientVector, Tape, TapeError, TapeNode, Var};
pub use hnn::{ArchSpec, NetworkParams, SystemKind, SystemSpec, TrainConfig};
pub use pruner::Mask;
pub use scalar::Scalar;

pub type Tape64 = Tape<f64>;
pub type Params64 = NetworkParams<f64>;
pub type System64 = SystemSpec<f64>;
pub type TrainConfig64 = TrainConfig<f64>;
