//! Moving tickets between networks with different output widths.
//!
//! Hidden layers carry over unchanged. The output layer is rebuilt column by
//! column (one column per output coordinate): stretching repeats the source
//! columns, squeezing drops whole columns. Output biases follow their
//! columns.

use std::fmt::Write as _;

use thiserror::Error;

use crate::hnn::{ArchSpec, HnnError, NetworkParams, SystemSpec, TrainConfig};
use crate::integrator::{rk4_solve, REFERENCE_SUBSTEPS};
use crate::pruner::{evaluate_network, Mask, PruneError, Ticket};
use crate::scalar::Scalar;

/// Output blocks squeezed away by default (1-indexed): the second-coordinate
/// position and momentum of a four-dimensional state.
pub const DEFAULT_SQUEEZE_DROP: [usize; 2] = [2, 4];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElasticError {
    #[error("hidden widths differ: {from:?} vs {to:?}")]
    HiddenMismatch { from: Vec<usize>, to: Vec<usize> },
    #[error("cannot stretch {from} outputs to {to}")]
    BadStretch { from: usize, to: usize },
    #[error("dropping {drop:?} from {from} outputs cannot leave {to}")]
    BadSqueeze { from: usize, to: usize, drop: Vec<usize> },
    #[error("drop index {index} outside 1..={outputs}")]
    DropOutOfRange { index: usize, outputs: usize },
    #[error("no stretch or squeeze maps {from} outputs to {to}")]
    NoMapping { from: usize, to: usize },
    #[error(transparent)]
    Ticket(#[from] crate::pruner::TicketError),
    #[error(transparent)]
    Hnn(#[from] HnnError),
    #[error(transparent)]
    Prune(#[from] PruneError),
}

/// How a source network's parameters land in a target architecture: hidden
/// layers are copied, and target output column `j` takes source column
/// `columns[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    pub source: ArchSpec,
    pub target: ArchSpec,
    pub columns: Vec<usize>,
}

impl BlockMap {
    /// Repeat the source columns cyclically: `(a, b) -> (a, b, a, b)`.
    pub fn stretch(source: &ArchSpec, target: &ArchSpec) -> Result<Self, ElasticError> {
        same_hidden(source, target)?;
        let (s, t) = (source.output_dim, target.output_dim);
        if t < s || t % s != 0 {
            return Err(ElasticError::BadStretch { from: s, to: t });
        }
        Ok(Self {
            source: source.clone(),
            target: target.clone(),
            columns: (0..t).map(|j| j % s).collect(),
        })
    }

    /// Remove the 1-indexed output blocks in `drop`.
    pub fn squeeze(source: &ArchSpec, target: &ArchSpec, drop: &[usize]) -> Result<Self, ElasticError> {
        same_hidden(source, target)?;
        let s = source.output_dim;
        if let Some(&index) = drop.iter().find(|&&i| i == 0 || i > s) {
            return Err(ElasticError::DropOutOfRange { index, outputs: s });
        }
        let columns: Vec<usize> = (0..s).filter(|j| !drop.contains(&(j + 1))).collect();
        if columns.len() != target.output_dim {
            return Err(ElasticError::BadSqueeze {
                from: s,
                to: target.output_dim,
                drop: drop.to_vec(),
            });
        }
        Ok(Self {
            source: source.clone(),
            target: target.clone(),
            columns,
        })
    }

    /// Stretch or squeeze (default drop) as the widths require.
    pub fn between(source: &ArchSpec, target: &ArchSpec) -> Result<Self, ElasticError> {
        let (s, t) = (source.output_dim, target.output_dim);
        if t >= s {
            Self::stretch(source, target)
        } else if s == 4 && t == 2 {
            Self::squeeze(source, target, &DEFAULT_SQUEEZE_DROP)
        } else {
            Err(ElasticError::NoMapping { from: s, to: t })
        }
    }

    pub fn apply_mask(&self, mask: &Mask) -> Result<Mask, ElasticError> {
        if !mask.conforms(&self.source) {
            return Err(crate::pruner::TicketError::Shape.into());
        }
        let last = mask.layer_count() - 1;
        let mut layers: Vec<Vec<bool>> = (0..last).map(|l| mask.layer(l).to_vec()).collect();
        layers.push(self.remap(mask.layer(last), mask.shapes()[last].0, self.source.output_dim));
        Ok(Mask::from_layers(self.target.layer_shapes(), layers).expect("target shapes"))
    }

    /// Map a flat parameter vector of the source layout.
    pub fn apply_values<T: Scalar>(&self, source: &NetworkParams<T>, values: &[T]) -> Vec<T> {
        let layout = source.layout();
        let last = layout.layer_count() - 1;
        let mut out = values[..layout.weight_range(last).start].to_vec();
        let fan_in = layout.shapes()[last].0;
        out.extend(self.remap(&values[layout.weight_range(last)], fan_in, self.source.output_dim));
        out.extend(self.remap(&values[layout.bias_range(last)], 1, self.source.output_dim));
        out
    }

    pub fn apply_ticket<T: Scalar>(&self, ticket: &Ticket<T>) -> Result<Ticket<T>, ElasticError> {
        if ticket.arch() != &self.source {
            return Err(crate::pruner::TicketError::Shape.into());
        }
        let mask = self.apply_mask(ticket.mask())?;
        let init = self.apply_values(ticket.init(), ticket.init().init_values());
        let params = NetworkParams::from_init(&self.target, init, ticket.seed())?;
        Ok(Ticket::new(mask, params)?)
    }

    fn remap<V: Copy>(&self, block: &[V], rows: usize, width: usize) -> Vec<V> {
        let mut out = Vec::with_capacity(rows * self.columns.len());
        for r in 0..rows {
            out.extend(self.columns.iter().map(|&c| block[r * width + c]));
        }
        out
    }
}

fn same_hidden(a: &ArchSpec, b: &ArchSpec) -> Result<(), ElasticError> {
    if a.hidden != b.hidden {
        return Err(ElasticError::HiddenMismatch {
            from: a.hidden.clone(),
            to: b.hidden.clone(),
        });
    }
    Ok(())
}

pub fn stretch_ticket<T: Scalar>(ticket: &Ticket<T>, target: &ArchSpec) -> Result<Ticket<T>, ElasticError> {
    BlockMap::stretch(ticket.arch(), target)?.apply_ticket(ticket)
}

/// `drop` holds 1-indexed output blocks; see [`DEFAULT_SQUEEZE_DROP`].
pub fn squeeze_ticket<T: Scalar>(
    ticket: &Ticket<T>,
    target: &ArchSpec,
    drop: &[usize],
) -> Result<Ticket<T>, ElasticError> {
    BlockMap::squeeze(ticket.arch(), target, drop)?.apply_ticket(ticket)
}

/// Where the target network starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransferInit {
    /// The stretched or squeezed source initialization.
    #[default]
    CarrySource,
    /// A fresh target initialization under the transferred mask.
    Fresh { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig<T> {
    pub train: TrainConfig<T>,
    pub t_max_sweep: Vec<T>,
    pub init: TransferInit,
}

impl<T: Scalar> TransferConfig<T> {
    /// `{2, 4, 6, 8} * pi`.
    pub fn default_sweep() -> Vec<T> {
        [2.0, 4.0, 6.0, 8.0].iter().map(|&k| T::lit(k) * T::PI()).collect()
    }
}

impl<T: Scalar> Default for TransferConfig<T> {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            t_max_sweep: Self::default_sweep(),
            init: TransferInit::CarrySource,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow<T> {
    pub source_density: f64,
    pub target_density: f64,
    pub t_max: T,
    /// `None` when training diverged.
    pub epsilon: Option<T>,
    pub final_loss: Option<T>,
    pub energy_drift: Option<T>,
    pub direction: String,
}

/// Train the target system from each transferred ticket, once per `t_max`.
/// Rows come out ticket-major in input order.
pub fn transfer_evaluate<T: Scalar>(
    tickets: &[Ticket<T>],
    target: &SystemSpec<T>,
    config: &TransferConfig<T>,
    direction: &str,
) -> Result<Vec<TransferRow<T>>, ElasticError> {
    transfer_evaluate_observed(tickets, target, config, direction, |_| {})
}

pub fn transfer_evaluate_observed<T: Scalar>(
    tickets: &[Ticket<T>],
    target: &SystemSpec<T>,
    config: &TransferConfig<T>,
    direction: &str,
    mut observe: impl FnMut(&TransferRow<T>),
) -> Result<Vec<TransferRow<T>>, ElasticError> {
    let mut setups = Vec::with_capacity(config.t_max_sweep.len());
    for &t_max in &config.t_max_sweep {
        let train = TrainConfig {
            t_max,
            ..config.train.clone()
        };
        train.validate()?;
        let grid = train.grid();
        let reference = rk4_solve(target, target.name(), &target.initial_state, &grid, REFERENCE_SUBSTEPS)
            .map_err(PruneError::from)?;
        setups.push((train, grid, reference));
    }
    let mut rows = Vec::with_capacity(tickets.len() * setups.len());
    for ticket in tickets {
        let arch = ArchSpec::new(ticket.arch().hidden.clone(), target.initial_state.len())?;
        let moved = BlockMap::between(ticket.arch(), &arch)?.apply_ticket(ticket)?;
        let (mask, carried) = moved.into_parts();
        let init = match config.init {
            TransferInit::CarrySource => carried,
            TransferInit::Fresh { seed } => NetworkParams::init(&arch, seed),
        };
        for (train, grid, reference) in &setups {
            let mut row = TransferRow {
                source_density: ticket.density(),
                target_density: mask.density(),
                t_max: train.t_max,
                epsilon: None,
                final_loss: None,
                energy_drift: None,
                direction: direction.to_string(),
            };
            match crate::hnn::train(&init, &mask, target, train) {
                Ok(out) => {
                    let (eps, drift) = evaluate_network(&out.params, &mask, target, grid, reference)?;
                    row.epsilon = Some(eps);
                    row.final_loss = Some(out.final_loss);
                    row.energy_drift = Some(drift);
                }
                Err(HnnError::Diverged { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            observe(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `source_density,target_t_max,epsilon,final_loss,direction,target_density,energy_drift`.
/// Diverged runs leave the numeric cells empty.
pub fn transfer_csv<T: Scalar>(rows: &[TransferRow<T>]) -> String {
    let cell = |v: Option<T>| v.map(|x| x.to_f64_lossy().to_string()).unwrap_or_default();
    let mut out = String::from("source_density,target_t_max,epsilon,final_loss,direction,target_density,energy_drift\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.source_density,
            r.t_max.to_f64_lossy(),
            cell(r.epsilon),
            cell(r.final_loss),
            r.direction,
            r.target_density,
            cell(r.energy_drift)
        );
    }
    out
}
