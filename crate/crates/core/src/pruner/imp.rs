use crate::hnn::{predict_trajectory, train, ArchSpec, HnnError, NetworkParams, SystemSpec, TrainConfig};
use crate::integrator::{energy_drift, rk4_solve, trajectory_error, Trajectory, REFERENCE_SUBSTEPS};
use crate::pruner::{floor_count, magnitude_prune, rewind, Mask, PruneError, PruneScope, Rounding, Ticket};
use crate::rgflow::{flow_observables, layer_magnitude_fraction, FlowObservables, FlowPoint, RgFlowError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule {
    pub scope: PruneScope,
    /// Fraction of eligible unmasked weights removed per iteration.
    pub rate: f64,
    /// Per-layer density below which a layer is no longer pruned.
    pub floor: f64,
    /// Pruning rounds after the first full-density training.
    pub max_iterations: usize,
    pub rounding: Rounding,
}

impl PruneSchedule {
    pub const GLOBAL_FLOOR: f64 = 0.05;
    pub const LAYER_FLOOR: f64 = 0.10;
    pub const DEFAULT_RATE: f64 = 0.05;
    pub const DEFAULT_MAX_ITERATIONS: usize = 100;

    pub fn new(scope: PruneScope, rate: f64) -> Self {
        let floor = match scope {
            PruneScope::Global => Self::GLOBAL_FLOOR,
            _ => Self::LAYER_FLOOR,
        };
        Self {
            scope,
            rate,
            floor,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            rounding: Rounding::Floor,
        }
    }

    pub fn global(rate: f64) -> Self {
        Self::new(PruneScope::Global, rate)
    }

    pub fn single_layer(layer: usize, rate: f64) -> Self {
        Self::new(PruneScope::SingleLayer(layer), rate)
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<(), PruneError> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(PruneError::InvalidRate(self.rate));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(PruneError::InvalidFloor(self.floor));
        }
        if let PruneScope::SingleLayer(i) = self.scope {
            if i >= arch.layer_count() {
                return Err(PruneError::LayerOutOfRange(i));
            }
        }
        Ok(())
    }

    /// Layers this schedule prunes.
    pub fn layers_in_scope(&self, layer_count: usize) -> Vec<usize> {
        match self.scope {
            PruneScope::SingleLayer(i) => vec![i],
            _ => (0..layer_count).collect(),
        }
    }

    /// Some layer in scope has reached its floor.
    pub fn floor_bound(&self, mask: &Mask) -> bool {
        self.layers_in_scope(mask.layer_count())
            .into_iter()
            .any(|l| mask.layer_unmasked(l) <= floor_count(self.floor, mask.layer_total(l)))
    }
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self::global(Self::DEFAULT_RATE)
    }
}

/// One IMP iteration: the network trained under `mask`, measured before the
/// next pruning round.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry<T> {
    pub iteration: usize,
    pub density: f64,
    pub layer_densities: Vec<f64>,
    pub unmasked: usize,
    /// Mean state error against the RK4 reference.
    pub epsilon: T,
    pub final_loss: T,
    pub energy_drift: T,
    /// `M_i` on the trained weights.
    pub fractions: Vec<T>,
    /// `N_before / N_after` of the pruning round into this iteration.
    pub scale: Option<f64>,
    pub floor_bound: bool,
    pub mask: Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    /// No layer in scope could lose another weight.
    Exhausted,
    /// Training at this iteration produced a non-finite loss; the trace
    /// ends before it.
    Diverged { iteration: usize, epoch: usize },
}

#[derive(Debug, Clone)]
pub struct PruneTrace<T> {
    pub system: String,
    pub schedule: PruneSchedule,
    /// Initialization every iteration rewinds to.
    pub init: NetworkParams<T>,
    pub entries: Vec<TraceEntry<T>>,
    pub stop: StopReason,
}

impl<T: Scalar> PruneTrace<T> {
    pub fn seed(&self) -> u64 {
        self.init.seed()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Diverged { .. })
    }

    /// The ticket (mask and rewound initialization) of iteration `n`.
    pub fn ticket(&self, n: usize) -> Option<Ticket<T>> {
        let entry = self.entries.get(n)?;
        Ticket::new(entry.mask.clone(), self.init.rewound()).ok()
    }

    /// `(density, epsilon)` pairs in iteration order.
    pub fn error_curve(&self) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.density, e.epsilon.to_f64_lossy()))
            .collect()
    }

    /// `(layer density, epsilon)` for the layer a single-layer run prunes.
    pub fn layer_error_curve(&self, layer: usize) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.layer_densities[layer], e.epsilon.to_f64_lossy()))
            .collect()
    }

    pub fn flow_points(&self) -> Vec<FlowPoint<T>> {
        self.entries
            .iter()
            .map(|e| FlowPoint {
                density: e.density,
                fractions: e.fractions.clone(),
                scale: e.scale,
                floor_bound: e.floor_bound,
            })
            .collect()
    }

    pub fn flow(&self) -> Result<FlowObservables<T>, RgFlowError> {
        flow_observables(&self.flow_points())
    }

    /// `iteration,density,unmasked,epsilon,final_loss,energy_drift,scale,floor_bound,d_1..d_L`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let layers = self.init.arch().layer_count();
        let mut out = String::from("iteration,density,unmasked,epsilon,final_loss,energy_drift,scale,floor_bound");
        for i in 1..=layers {
            let _ = write!(out, ",d_{i}");
        }
        out.push('\n');
        for e in &self.entries {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.iteration,
                e.density,
                e.unmasked,
                e.epsilon.to_f64_lossy(),
                e.final_loss.to_f64_lossy(),
                e.energy_drift.to_f64_lossy(),
                e.scale.map(|s| s.to_string()).unwrap_or_default(),
                u8::from(e.floor_bound),
            );
            for d in &e.layer_densities {
                let _ = write!(out, ",{d}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trajectory error and energy drift of a trained network on `grid`.
pub fn evaluate_network<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
    system: &SystemSpec<T>,
    grid: &[T],
    reference: &Trajectory<T>,
) -> Result<(T, T), PruneError> {
    let states = predict_trajectory(params, mask, system, grid)?;
    let eps = trajectory_error(&states, reference)?;
    let drift = energy_drift(&states, system)?;
    Ok((eps, drift))
}

/// Train, measure, prune, rewind, repeat. See [`imp_run_observed`].
pub fn imp_run<T: Scalar>(
    system: &SystemSpec<T>,
    arch: &ArchSpec,
    schedule: &PruneSchedule,
    config: &TrainConfig<T>,
    seed: u64,
) -> Result<PruneTrace<T>, PruneError> {
    imp_run_observed(system, arch, schedule, config, NetworkParams::init(arch, seed), |_| {})
}

/// IMP from a given initialization, calling `observe` after each iteration.
///
/// Iteration 0 trains the dense network. Each later iteration prunes the
/// previous trained weights, rewinds the survivors to `init` and retrains
/// with fresh optimizer state. The run stops after `max_iterations` rounds,
/// when no weight in scope can be removed, or at the first divergence.
pub fn imp_run_observed<T: Scalar>(
    system: &SystemSpec<T>,
    arch: &ArchSpec,
    schedule: &PruneSchedule,
    config: &TrainConfig<T>,
    init: NetworkParams<T>,
    mut observe: impl FnMut(&TraceEntry<T>),
) -> Result<PruneTrace<T>, PruneError> {
    schedule.validate(arch)?;
    config.validate()?;
    if init.arch() != arch {
        return Err(PruneError::MaskMismatch);
    }
    let grid = config.grid();
    let reference = rk4_solve(system, system.name(), &system.initial_state, &grid, REFERENCE_SUBSTEPS)?;
    let mut mask = Mask::full(arch);
    let mut params = init.rewound();
    let mut entries: Vec<TraceEntry<T>> = Vec::new();
    let mut scale = None;

    let stop = loop {
        let n = entries.len();
        let outcome = match train(&params, &mask, system, config) {
            Ok(o) => o,
            Err(HnnError::Diverged { epoch }) => break StopReason::Diverged { iteration: n, epoch },
            Err(e) => return Err(e.into()),
        };
        let (epsilon, drift) = evaluate_network(&outcome.params, &mask, system, &grid, &reference)?;
        let entry = TraceEntry {
            iteration: n,
            density: mask.density(),
            layer_densities: mask.layer_densities(),
            unmasked: mask.unmasked(),
            epsilon,
            final_loss: outcome.final_loss,
            energy_drift: drift,
            fractions: layer_magnitude_fraction(&outcome.params, &mask)?,
            scale,
            floor_bound: schedule.floor_bound(&mask),
            mask: mask.clone(),
        };
        observe(&entry);
        entries.push(entry);
        if n >= schedule.max_iterations {
            break StopReason::MaxIterations;
        }
        let pruned = magnitude_prune(
            &outcome.params,
            &mask,
            schedule.rate,
            schedule.scope,
            schedule.floor,
            schedule.rounding,
        )?;
        if pruned.removed == 0 {
            break StopReason::Exhausted;
        }
        let before = mask.unmasked();
        mask = pruned.mask;
        scale = Some(before as f64 / mask.unmasked() as f64);
        params = rewind(&outcome.params);
    };

    Ok(PruneTrace {
        system: system.name().to_string(),
        schedule: schedule.clone(),
        init,
        entries,
        stop,
    })
}
