//! Experiment configuration: TOML in, validated and fully defaulted out.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ticketlab_core::elastic::TransferInit;
use ticketlab_core::hnn::{Checkpoint, GradientBackend};
use ticketlab_core::pruner::{PruneSchedule, PruneScope, Rounding};
use ticketlab_core::scaling::{DEFAULT_EPSILON_FLOOR, DEFAULT_PLATEAU_TOLERANCE};
use ticketlab_core::{ArchSpec, SystemKind, SystemSpec, TrainConfig};

pub const DESK_EPOCHS: usize = 20_000;
pub const PAPER_EPOCHS: usize = 50_000;
pub const PAPER_RATES: [f64; 3] = [0.01, 0.05, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TrainFull,
    ImpLayerwise,
    ImpGlobal,
    RgObservables,
    TransferNloToHh,
    TransferHhToNlo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::TrainFull,
        ExperimentKind::ImpLayerwise,
        ExperimentKind::ImpGlobal,
        ExperimentKind::RgObservables,
        ExperimentKind::TransferNloToHh,
        ExperimentKind::TransferHhToNlo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TrainFull => "train_full",
            ExperimentKind::ImpLayerwise => "imp_layerwise",
            ExperimentKind::ImpGlobal => "imp_global",
            ExperimentKind::RgObservables => "rg_observables",
            ExperimentKind::TransferNloToHh => "transfer_nlo_to_hh",
            ExperimentKind::TransferHhToNlo => "transfer_hh_to_nlo",
        }
    }

    /// Source and target systems of a transfer.
    pub fn transfer_systems(self) -> Option<(SystemKind, SystemKind)> {
        match self {
            ExperimentKind::TransferNloToHh => Some((SystemKind::NonlinearOscillator, SystemKind::HenonHeiles)),
            ExperimentKind::TransferHhToNlo => Some((SystemKind::HenonHeiles, SystemKind::NonlinearOscillator)),
            _ => None,
        }
    }

    fn default_system(self) -> SystemKind {
        self.transfer_systems()
            .map_or(SystemKind::NonlinearOscillator, |(s, _)| s)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    Global,
    SingleLayer,
    AllLayers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Batched,
    Tape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    BestLoss,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingKind {
    Floor,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    CarrySource,
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: String,
    pub initial_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub grid_points: usize,
    pub t_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub backend: BackendKind,
    pub checkpoint: CheckpointKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub scope: ScopeKind,
    /// 1-indexed layers pruned one at a time by single-layer runs.
    pub layers: Vec<usize>,
    pub rates: Vec<f64>,
    pub floor: f64,
    pub max_iterations: usize,
    pub rounding: RoundingKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub plateau_tolerance: f64,
    pub epsilon_floor: f64,
    /// Manual power-law window `[d_low, d_high]`; segmentation picks it
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub t_max_sweep: Vec<f64>,
    pub init: InitKind,
    /// Transfer every k-th ticket of the source run (the densest and the
    /// sparsest are always included).
    pub ticket_stride: usize,
    /// Also prune the target system natively for comparison.
    pub native_baseline: bool,
    /// Take the source tickets from this finished pruning run instead of
    /// pruning the source system again.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_run: Option<PathBuf>,
    /// Take the native baseline from this finished pruning run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_run: Option<PathBuf>,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub system: SystemSection,
    pub arch: ArchSection,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub fit: FitSection,
    pub transfer: TransferSection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentKind>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    parallelism: Option<usize>,
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    arch: RawArch,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    prune: RawPrune,
    #[serde(default)]
    fit: RawFit,
    #[serde(default)]
    transfer: RawTransfer,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    kind: Option<String>,
    initial_state: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArch {
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    grid_points: Option<usize>,
    t_max: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    backend: Option<BackendKind>,
    checkpoint: Option<CheckpointKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrune {
    scope: Option<ScopeKind>,
    layers: Option<Vec<usize>>,
    rate: Option<f64>,
    rates: Option<Vec<f64>>,
    floor: Option<f64>,
    max_iterations: Option<usize>,
    rounding: Option<RoundingKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    plateau_tolerance: Option<f64>,
    epsilon_floor: Option<f64>,
    window: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransfer {
    t_max_sweep: Option<Vec<f64>>,
    init: Option<InitKind>,
    ticket_stride: Option<usize>,
    native_baseline: Option<bool>,
    source_run: Option<PathBuf>,
    native_run: Option<PathBuf>,
}

/// Settings that come from the command line rather than the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Used when the file names no experiment.
    pub default_experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// 5e4 epochs and the full 1/5/10% rate schedule, unless the file sets
    /// them explicitly.
    pub paper_fidelity: bool,
}

/// Parse with defaults for everything missing.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let experiment = raw
        .experiment
        .or(overrides.default_experiment)
        .ok_or_else(|| ConfigError {
            line: None,
            message: "no experiment kind given".into(),
        })?;
    let at = |section: &str, key: &str| locate(text, section, key);
    let bad = |section: &str, key: &str, message: String| ConfigError {
        line: at(section, key),
        message,
    };

    let kind_name = raw
        .system
        .kind
        .clone()
        .unwrap_or_else(|| experiment.default_system().tag().to_string());
    let kind: SystemKind = kind_name.parse().map_err(|m| bad("system", "kind", m))?;
    if let Some((source, _)) = experiment.transfer_systems() {
        if kind != source {
            return Err(bad(
                "system",
                "kind",
                format!("{experiment} starts from {source}, not {kind}"),
            ));
        }
    }
    let initial_state = raw
        .system
        .initial_state
        .unwrap_or_else(|| kind.default_initial_state());
    if SystemSpec::new(kind, initial_state.clone()).is_none() {
        return Err(bad(
            "system",
            "initial_state",
            format!("initial_state must hold {} finite values", kind.dim()),
        ));
    }

    let hidden = raw.arch.hidden.unwrap_or_else(|| ArchSpec::DEFAULT_HIDDEN.to_vec());
    let arch = ArchSpec::new(hidden.clone(), kind.dim()).map_err(|e| bad("arch", "hidden", e.to_string()))?;
    if hidden.is_empty() {
        return Err(bad("arch", "hidden", "at least one hidden layer is required".into()));
    }

    let d = TrainConfig::<f64>::default();
    let fidelity_epochs = if overrides.paper_fidelity { PAPER_EPOCHS } else { DESK_EPOCHS };
    let train = TrainSection {
        epochs: raw.train.epochs.unwrap_or(fidelity_epochs),
        learning_rate: raw.train.learning_rate.unwrap_or(d.learning_rate),
        grid_points: raw.train.grid_points.unwrap_or(d.grid_points),
        t_max: raw.train.t_max.unwrap_or(d.t_max),
        beta1: raw.train.beta1.unwrap_or(d.beta1),
        beta2: raw.train.beta2.unwrap_or(d.beta2),
        epsilon: raw.train.epsilon.unwrap_or(d.epsilon),
        backend: raw.train.backend.unwrap_or(BackendKind::Batched),
        checkpoint: raw.train.checkpoint.unwrap_or(CheckpointKind::BestLoss),
    };
    if train.epochs == 0 {
        return Err(bad("train", "epochs", "epochs must be at least 1".into()));
    }
    to_train_config(&train)
        .validate()
        .map_err(|e| ConfigError {
            line: at("train", first_key(&e.to_string())),
            message: e.to_string(),
        })?;

    let default_scope = match experiment {
        ExperimentKind::ImpLayerwise => ScopeKind::SingleLayer,
        _ => ScopeKind::Global,
    };
    let scope = raw.prune.scope.unwrap_or(default_scope);
    let rates = match (raw.prune.rate, raw.prune.rates) {
        (Some(_), Some(_)) => {
            return Err(bad("prune", "rates", "give either `rate` or `rates`, not both".into()));
        }
        (Some(r), None) => vec![r],
        (None, Some(rs)) => rs,
        (None, None) if overrides.paper_fidelity && experiment != ExperimentKind::TrainFull => PAPER_RATES.to_vec(),
        (None, None) => vec![PruneSchedule::DEFAULT_RATE],
    };
    let rate_key = if at("prune", "rate").is_some() { "rate" } else { "rates" };
    if rates.is_empty() {
        return Err(bad("prune", rate_key, "at least one pruning rate is required".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(bad("prune", rate_key, format!("pruning rate {r} is outside (0, 1)")));
    }
    let default_floor = match scope {
        ScopeKind::Global => PruneSchedule::GLOBAL_FLOOR,
        _ => PruneSchedule::LAYER_FLOOR,
    };
    let floor = raw.prune.floor.unwrap_or(default_floor);
    if !(floor > 0.0 && floor < 1.0) {
        return Err(bad("prune", "floor", format!("density floor {floor} is outside (0, 1)")));
    }
    let layer_count = arch.layer_count();
    let layers = raw.prune.layers.unwrap_or_else(|| (1..=layer_count).collect());
    if let Some(l) = layers.iter().find(|&&l| l == 0 || l > layer_count) {
        return Err(bad("prune", "layers", format!("layer {l} is outside 1..={layer_count}")));
    }
    if layers.is_empty() && scope == ScopeKind::SingleLayer {
        return Err(bad("prune", "layers", "single-layer pruning needs at least one layer".into()));
    }
    let default_iterations = if overrides.paper_fidelity { 1000 } else { PruneSchedule::DEFAULT_MAX_ITERATIONS };
    let prune = PruneSection {
        scope,
        layers,
        rates,
        floor,
        max_iterations: raw.prune.max_iterations.unwrap_or(default_iterations),
        rounding: raw.prune.rounding.unwrap_or(RoundingKind::Floor),
    };

    let fit = FitSection {
        plateau_tolerance: raw.fit.plateau_tolerance.unwrap_or(DEFAULT_PLATEAU_TOLERANCE),
        epsilon_floor: raw.fit.epsilon_floor.unwrap_or(DEFAULT_EPSILON_FLOOR),
        window: raw.fit.window,
    };
    if !(fit.plateau_tolerance >= 0.0) {
        return Err(bad("fit", "plateau_tolerance", "plateau_tolerance must be non-negative".into()));
    }
    if !(fit.epsilon_floor > 0.0) {
        return Err(bad("fit", "epsilon_floor", "epsilon_floor must be positive".into()));
    }
    if let Some([lo, hi]) = fit.window {
        if !(lo > 0.0 && hi > lo && hi <= 1.0) {
            return Err(bad("fit", "window", format!("window [{lo}, {hi}] must satisfy 0 < low < high <= 1")));
        }
    }

    let transfer = TransferSection {
        t_max_sweep: raw
            .transfer
            .t_max_sweep
            .unwrap_or_else(ticketlab_core::elastic::TransferConfig::<f64>::default_sweep),
        init: raw.transfer.init.unwrap_or(InitKind::CarrySource),
        ticket_stride: raw.transfer.ticket_stride.unwrap_or(1),
        native_baseline: raw.transfer.native_baseline.unwrap_or(true),
        source_run: raw.transfer.source_run,
        native_run: raw.transfer.native_run,
    };
    if transfer.t_max_sweep.is_empty() || transfer.t_max_sweep.iter().any(|t| !(*t > 0.0)) {
        return Err(bad("transfer", "t_max_sweep", "t_max_sweep needs positive values".into()));
    }
    if transfer.ticket_stride == 0 {
        return Err(bad("transfer", "ticket_stride", "ticket_stride must be at least 1".into()));
    }

    let seed = overrides.seed.or(raw.seed).unwrap_or(1);
    if seed > i64::MAX as u64 {
        return Err(bad("", "seed", format!("seed must be at most {}", i64::MAX)));
    }
    let parallelism = raw.parallelism.unwrap_or(1);
    if parallelism == 0 {
        return Err(bad("", "parallelism", "parallelism must be at least 1".into()));
    }
    Ok(ExperimentConfig {
        experiment,
        seed,
        output_dir: overrides.output_dir.clone().or(raw.output_dir),
        parallelism,
        system: SystemSection {
            kind: kind.tag().to_string(),
            initial_state,
        },
        arch: ArchSection { hidden },
        train,
        prune,
        fit,
        transfer,
    })
}

fn first_key(message: &str) -> &str {
    ["grid_points", "t_max", "learning_rate", "beta", "epsilon"]
        .into_iter()
        .find(|k| message.contains(k))
        .map_or("", |k| if k == "beta" { "beta1" } else { k })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (top level when `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    if key.is_empty() {
        return None;
    }
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

pub fn to_train_config(t: &TrainSection) -> TrainConfig<f64> {
    TrainConfig {
        epochs: t.epochs,
        learning_rate: t.learning_rate,
        grid_points: t.grid_points,
        t_max: t.t_max,
        beta1: t.beta1,
        beta2: t.beta2,
        epsilon: t.epsilon,
        backend: match t.backend {
            BackendKind::Batched => GradientBackend::Batched,
            BackendKind::Tape => GradientBackend::Tape,
        },
        checkpoint: match t.checkpoint {
            CheckpointKind::BestLoss => Checkpoint::BestLoss,
            CheckpointKind::Last => Checkpoint::Last,
        },
    }
}

impl ExperimentConfig {
    pub fn system_kind(&self) -> SystemKind {
        self.system.kind.parse().expect("validated system kind")
    }

    pub fn system_spec(&self) -> SystemSpec<f64> {
        SystemSpec::new(self.system_kind(), self.system.initial_state.clone()).expect("validated initial state")
    }

    pub fn arch_for(&self, kind: SystemKind) -> ArchSpec {
        ArchSpec::new(self.arch.hidden.clone(), kind.dim()).expect("validated widths")
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch_for(self.system_kind())
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        to_train_config(&self.train)
    }

    pub fn rounding(&self) -> Rounding {
        match self.prune.rounding {
            RoundingKind::Floor => Rounding::Floor,
            RoundingKind::Nearest => Rounding::Nearest,
        }
    }

    /// Schedule for one rate, and a 0-indexed layer for single-layer scope.
    pub fn schedule(&self, rate: f64, layer: Option<usize>) -> PruneSchedule {
        let scope = match (self.prune.scope, layer) {
            (ScopeKind::SingleLayer, Some(l)) => PruneScope::SingleLayer(l),
            (ScopeKind::AllLayers, _) => PruneScope::AllLayersIndependently,
            _ => PruneScope::Global,
        };
        PruneSchedule {
            scope,
            rate,
            floor: self.prune.floor,
            max_iterations: self.prune.max_iterations,
            rounding: self.rounding(),
        }
    }

    pub fn transfer_init(&self, fresh_seed: u64) -> TransferInit {
        match self.transfer.init {
            InitKind::CarrySource => TransferInit::CarrySource,
            InitKind::Fresh => TransferInit::Fresh { seed: fresh_seed },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the settings that determine the numbers: everything
    /// except the output directory and the degree of parallelism.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        canonical.parallelism = 1;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
