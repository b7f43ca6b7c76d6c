//! Experiment pipelines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use ticketlab_core::elastic::{transfer_csv, transfer_evaluate_observed, TransferConfig, TransferRow};
use ticketlab_core::hnn::{predict_trajectory, train};
use ticketlab_core::integrator::{rk4_solve, REFERENCE_SUBSTEPS};
use ticketlab_core::pruner::ticket::mask_to_bytes;
use ticketlab_core::pruner::{
    evaluate_network, imp_run_observed, PruneSchedule, PruneTrace, StopReason, Ticket, TraceEntry,
};
use ticketlab_core::rgflow::layer_magnitude_fraction;
use ticketlab_core::scaling::{
    fit_power_law_with_floor, layer_exponents_csv, layerwise_exponents, segment_regimes, PowerLawFit,
    RegimeSegmentation,
};
use ticketlab_core::seed::derive_seed;
use ticketlab_core::{Mask, NetworkParams, SystemKind, SystemSpec};

use crate::artifacts::{sha256_hex, Artifacts, RunManifest, MANIFEST_NAME};
use crate::compare::Table;
use crate::config::{ExperimentConfig, ExperimentKind, FitSection};
use crate::{HarnessError, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "TICKETLAB_OUT";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Seed of the network initialization for `kind` under top-level `seed`.
pub fn init_seed(seed: u64, kind: SystemKind) -> u64 {
    derive_seed(seed, &format!("init/{}", kind.tag()), 0)
}

/// Seed of a fresh transfer-target initialization.
pub fn fresh_init_seed(seed: u64, target: SystemKind) -> u64 {
    derive_seed(seed, &format!("transfer-init/{}", target.tag()), 0)
}

/// Directory a run writes into.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| default_output_root().join(format!("{}-seed{}", config.experiment.name(), config.seed)))
}

pub fn rate_tag(rate: f64) -> String {
    format!("p{rate}")
}

/// Run the configured experiment and write its artifacts and manifest.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let mut art = Artifacts::new(output_dir(config))?;
    art.write("config.toml", "config", config.to_toml().as_bytes())?;
    let mut notes = Vec::new();
    let mut diverged = false;
    let mut seeds = Vec::new();

    match config.experiment {
        ExperimentKind::TrainFull => {
            let kind = config.system_kind();
            seeds.push((format!("init/{}", kind.tag()), init_seed(config.seed, kind)));
            diverged = train_full(config, &mut art)?;
        }
        ExperimentKind::ImpGlobal | ExperimentKind::RgObservables => {
            let kind = config.system_kind();
            seeds.push((format!("init/{}", kind.tag()), init_seed(config.seed, kind)));
            let system = config.system_spec();
            let jobs: Vec<Job> = config
                .prune
                .rates
                .iter()
                .map(|&rate| Job {
                    tag: rate_tag(rate),
                    system: system.clone(),
                    schedule: config.schedule(rate, None),
                })
                .collect();
            let traces = run_jobs(config, jobs)?;
            let with_fit = config.experiment == ExperimentKind::ImpGlobal;
            let mut sigma = String::from("system,rate,layer,sigma,steps_used\n");
            for (tag, trace) in &traces {
                diverged |= trace.diverged();
                write_trace(&mut art, tag, trace, with_fit.then_some(&config.fit), &mut notes)?;
                append_sigma(&mut sigma, trace, &mut notes);
            }
            art.write("sigma.csv", "sigma", sigma.as_bytes())?;
        }
        ExperimentKind::ImpLayerwise => {
            let kind = config.system_kind();
            seeds.push((format!("init/{}", kind.tag()), init_seed(config.seed, kind)));
            let system = config.system_spec();
            let mut jobs = Vec::new();
            for &rate in &config.prune.rates {
                for &layer in &config.prune.layers {
                    jobs.push(Job {
                        tag: format!("L{layer}_{}", rate_tag(rate)),
                        system: system.clone(),
                        schedule: config.schedule(rate, Some(layer - 1)),
                    });
                }
            }
            let traces = run_jobs(config, jobs)?;
            for (tag, trace) in &traces {
                diverged |= trace.diverged();
                write_trace(&mut art, tag, trace, None, &mut notes)?;
            }
            for &rate in &config.prune.rates {
                let curves: Vec<(usize, Vec<(f64, f64)>)> = config
                    .prune
                    .layers
                    .iter()
                    .map(|&layer| {
                        let tag = format!("L{layer}_{}", rate_tag(rate));
                        let trace = &traces.iter().find(|(t, _)| *t == tag).expect("job ran").1;
                        (layer - 1, trace.layer_error_curve(layer - 1))
                    })
                    .collect();
                match layerwise_exponents(&curves, config.fit.plateau_tolerance) {
                    Ok(rows) => {
                        let name = format!("layer_exponents_{}.csv", rate_tag(rate));
                        art.write(&name, "layer_exponents", layer_exponents_csv(&rows).as_bytes())?;
                    }
                    Err(e) => notes.push(format!("layer exponents at rate {rate}: {e}")),
                }
            }
        }
        ExperimentKind::TransferNloToHh | ExperimentKind::TransferHhToNlo => {
            let (source, target) = config.experiment.transfer_systems().expect("transfer kind");
            seeds.push((format!("init/{}", source.tag()), init_seed(config.seed, source)));
            diverged = transfer(config, source, target, &mut art, &mut notes, &mut seeds)?;
        }
    }

    let manifest = RunManifest {
        tool: "ticketlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: config.experiment.name().into(),
        seed: config.seed,
        config_hash: config.hash(),
        config: serde_json::to_value(config).expect("config serializes"),
        init_seeds: seeds,
        artifacts: Vec::new(),
        status: if diverged { "diverged" } else { "ok" }.into(),
        notes,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    art.finish(manifest)
}

struct Job {
    tag: String,
    system: SystemSpec<f64>,
    schedule: PruneSchedule,
}

fn log_entry(tag: &str, system: &str, e: &TraceEntry<f64>) {
    eprintln!(
        "[{system} {tag}] iter {:>3} d={:.4} eps={:.3e} loss={:.3e}",
        e.iteration, e.density, e.epsilon, e.final_loss
    );
}

fn run_jobs(config: &ExperimentConfig, jobs: Vec<Job>) -> Result<Vec<(String, PruneTrace<f64>)>> {
    let train = config.train_config();
    let one = |job: &Job| -> Result<(String, PruneTrace<f64>)> {
        let arch = config.arch_for(job.system.kind);
        let init = NetworkParams::init(&arch, init_seed(config.seed, job.system.kind));
        let name = job.system.name().to_string();
        let trace = imp_run_observed(&job.system, &arch, &job.schedule, &train, init, |e| {
            log_entry(&job.tag, &name, e)
        })?;
        Ok((job.tag.clone(), trace))
    };
    if config.parallelism <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Compare(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(one).collect())
}

fn stop_note(tag: &str, trace: &PruneTrace<f64>) -> Option<String> {
    match trace.stop {
        StopReason::Diverged { iteration, epoch } => Some(format!(
            "{} {tag}: training diverged at iteration {iteration}, epoch {epoch}; trace truncated",
            trace.system
        )),
        _ => None,
    }
}

/// Curve analysis used by the pipelines: regimes, then a power-law fit over
/// the configured or detected window.
pub fn analyse_curve(
    curve: &[(f64, f64)],
    fit: &FitSection,
) -> Result<(RegimeSegmentation, Option<PowerLawFit>)> {
    let seg = segment_regimes(curve, fit.plateau_tolerance)?;
    let window = match fit.window {
        Some([lo, hi]) => Some((lo, hi)),
        None if seg.power_law.len() >= 3 => seg.power_law_interval(),
        None => None,
    };
    let power = match window {
        Some(w) => Some(fit_power_law_with_floor(curve, Some(w), fit.epsilon_floor)?),
        None => None,
    };
    Ok((seg, power))
}

fn fit_summary(system: &str, tag: &str, seg: &RegimeSegmentation, fit: Option<&PowerLawFit>) -> String {
    let mut out = String::new();
    let span = |r: Option<(f64, f64)>, n: usize| match r {
        Some((lo, hi)) => format!("[{lo}, {hi}] ({n} points)"),
        None => "none".to_string(),
    };
    let _ = writeln!(out, "system = {system}");
    let _ = writeln!(out, "run = {tag}");
    let _ = writeln!(out, "low_plateau = {}", span(seg.low_interval(), seg.low.len()));
    let _ = writeln!(out, "power_law = {}", span(seg.power_law_interval(), seg.power_law.len()));
    let _ = writeln!(out, "high_plateau = {}", span(seg.high_interval(), seg.high.len()));
    let _ = writeln!(out, "eps_low = {}", seg.eps_low);
    let _ = writeln!(out, "eps_up = {}", seg.eps_up);
    let _ = writeln!(out, "quality = {:?}", seg.quality);
    match fit {
        Some(f) => {
            let _ = writeln!(out, "{f}");
        }
        None => {
            let _ = writeln!(out, "fit = none (power-law window shorter than 3 points)");
        }
    }
    out
}

fn write_trace(
    art: &mut Artifacts,
    tag: &str,
    trace: &PruneTrace<f64>,
    fit: Option<&FitSection>,
    notes: &mut Vec<String>,
) -> Result<()> {
    art.write(&format!("trace_{tag}.csv"), "trace", trace.to_csv().as_bytes())?;
    for (n, e) in trace.entries.iter().enumerate() {
        art.write(
            &format!("masks/{tag}/iter_{n:03}.mask"),
            "mask",
            &mask_to_bytes(&e.mask, trace.seed()),
        )?;
        let ticket = trace.ticket(n).expect("entry exists");
        art.write(&format!("tickets/{tag}/iter_{n:03}.ticket"), "ticket", &ticket.to_bytes())?;
    }
    notes.extend(stop_note(tag, trace));
    if trace.entries.len() >= 2 {
        match trace.flow() {
            Ok(flow) => {
                art.write(&format!("rgflow_{tag}.csv"), "rgflow", flow.to_csv().as_bytes())?;
            }
            Err(e) => notes.push(format!("{tag}: no flow observables: {e}")),
        }
    }
    if let Some(fit) = fit {
        match analyse_curve(&trace.error_curve(), fit) {
            Ok((seg, power)) => {
                art.write(&format!("regimes_{tag}.csv"), "regimes", seg.to_csv().as_bytes())?;
                let summary = fit_summary(&trace.system, tag, &seg, power.as_ref());
                art.write(&format!("fit_{tag}.txt"), "fit", summary.as_bytes())?;
            }
            Err(e) => notes.push(format!("{tag}: no fit: {e}")),
        }
    }
    Ok(())
}

fn append_sigma(out: &mut String, trace: &PruneTrace<f64>, notes: &mut Vec<String>) {
    if trace.entries.len() < 2 {
        return;
    }
    match trace.flow() {
        Ok(flow) => {
            for (i, s) in flow.sigma.mean.iter().enumerate() {
                let cell = s.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{cell},{}",
                    trace.system,
                    trace.schedule.rate,
                    i + 1,
                    flow.sigma.steps_used
                );
            }
        }
        Err(e) => notes.push(format!("sigma at rate {}: {e}", trace.schedule.rate)),
    }
}

fn train_full(config: &ExperimentConfig, art: &mut Artifacts) -> Result<bool> {
    let system = config.system_spec();
    let arch = config.arch();
    let init = NetworkParams::init(&arch, init_seed(config.seed, system.kind));
    let mask = Mask::full(&arch);
    let train_cfg = config.train_config();
    let grid = train_cfg.grid();
    let reference = rk4_solve(&system, system.name(), &system.initial_state, &grid, REFERENCE_SUBSTEPS)
        .map_err(ticketlab_core::pruner::PruneError::from)?;
    let schedule = PruneSchedule::global(PruneSchedule::DEFAULT_RATE).with_max_iterations(0);
    let outcome = match train(&init, &mask, &system, &train_cfg) {
        Ok(o) => o,
        Err(ticketlab_core::hnn::HnnError::Diverged { epoch }) => {
            let trace = PruneTrace {
                system: system.name().into(),
                schedule,
                init,
                entries: Vec::new(),
                stop: StopReason::Diverged { iteration: 0, epoch },
            };
            art.write("trace.csv", "trace", trace.to_csv().as_bytes())?;
            return Ok(true);
        }
        Err(e) => return Err(e.into()),
    };
    let (epsilon, drift) = evaluate_network(&outcome.params, &mask, &system, &grid, &reference)?;
    let entry = TraceEntry {
        iteration: 0,
        density: 1.0,
        layer_densities: mask.layer_densities(),
        unmasked: mask.unmasked(),
        epsilon,
        final_loss: outcome.final_loss,
        energy_drift: drift,
        fractions: layer_magnitude_fraction(&outcome.params, &mask)?,
        scale: None,
        floor_bound: false,
        mask: mask.clone(),
    };
    log_entry("full", system.name(), &entry);
    let trace = PruneTrace {
        system: system.name().into(),
        schedule,
        init: init.clone(),
        entries: vec![entry],
        stop: StopReason::MaxIterations,
    };
    art.write("trace.csv", "trace", trace.to_csv().as_bytes())?;

    let mut history = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_history.iter().enumerate() {
        let _ = writeln!(history, "{i},{l}");
    }
    art.write("loss_history.csv", "loss_history", history.as_bytes())?;

    let states = predict_trajectory(&outcome.params, &mask, &system, &grid)?;
    let dim = system.initial_state.len();
    let mut traj = String::from("t");
    for prefix in ["nn", "ref"] {
        for i in 1..=dim {
            let _ = write!(traj, ",{prefix}_{i}");
        }
    }
    traj.push('\n');
    for (k, t) in grid.iter().enumerate() {
        let _ = write!(traj, "{t}");
        for v in states[k].iter().chain(&reference.states[k]) {
            let _ = write!(traj, ",{v}");
        }
        traj.push('\n');
    }
    art.write("trajectory.csv", "trajectory", traj.as_bytes())?;
    let ticket = Ticket::new(mask, init).expect("full mask conforms");
    art.write("tickets/full.ticket", "ticket", &ticket.to_bytes())?;
    Ok(false)
}

/// Every `stride`-th index below `n`, always keeping the first and the last.
pub fn stride_indices(n: usize, stride: usize) -> Vec<usize> {
    (0..n).filter(|&i| i % stride.max(1) == 0 || i + 1 == n).collect()
}

/// Tickets and error curve `(d, eps)` of the first pruning trace in a
/// finished run directory. Files are checked against their manifest digests.
pub fn load_pruned_run(dir: &Path, system: SystemKind) -> Result<(Vec<Ticket<f64>>, Vec<(f64, f64)>)> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest = RunManifest::load(&manifest_path)?;
    let bad = |message: String| HarnessError::Manifest {
        path: manifest_path.clone(),
        message,
    };
    let kind = manifest.config.pointer("/system/kind").and_then(|v| v.as_str());
    if kind != Some(system.tag()) {
        return Err(bad(format!("run is on system {kind:?}, expected {}", system.tag())));
    }
    let trace = manifest
        .artifacts_of("trace")
        .next()
        .ok_or_else(|| bad("run has no pruning trace".into()))?;
    let tag = trace
        .path
        .strip_prefix("trace_")
        .and_then(|s| s.strip_suffix(".csv"))
        .ok_or_else(|| bad(format!("unexpected trace name {}", trace.path)))?;
    let read = |rel: &str, digest: &str| -> Result<Vec<u8>> {
        let path = dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        if sha256_hex(&bytes) != digest {
            return Err(bad(format!("{rel} does not match its recorded digest")));
        }
        Ok(bytes)
    };
    let table = Table::parse(&String::from_utf8_lossy(&read(&trace.path, &trace.sha256)?))
        .ok_or_else(|| bad(format!("{} is malformed", trace.path)))?;
    let (d, eps) = (
        table.f64_column("density").ok_or_else(|| bad("trace lacks density".into()))?,
        table.f64_column("epsilon").ok_or_else(|| bad("trace lacks epsilon".into()))?,
    );
    let curve = d.into_iter().zip(eps).filter_map(|(d, e)| Some((d?, e?))).collect();
    let prefix = format!("tickets/{tag}/");
    let mut tickets = Vec::new();
    for rec in manifest.artifacts_of("ticket").filter(|r| r.path.starts_with(&prefix)) {
        let bytes = read(&rec.path, &rec.sha256)?;
        tickets.push(Ticket::from_bytes(&bytes).map_err(|e| bad(format!("{}: {e}", rec.path)))?);
    }
    if tickets.is_empty() {
        return Err(bad(format!("no tickets under {prefix}")));
    }
    Ok((tickets, curve))
}

/// Plateau span `1 - d_end` of the low-error plateau of a curve.
pub fn plateau_span(curve: &[(f64, f64)], tolerance: f64) -> Option<f64> {
    let seg = segment_regimes(curve, tolerance).ok()?;
    seg.low_interval().map(|(lo, hi)| hi - lo)
}

fn transfer(
    config: &ExperimentConfig,
    source: SystemKind,
    target: SystemKind,
    art: &mut Artifacts,
    notes: &mut Vec<String>,
    seeds: &mut Vec<(String, u64)>,
) -> Result<bool> {
    let rate = config.prune.rates[0];
    let target_spec = SystemSpec::<f64>::with_default_state(target);
    let mut jobs = Vec::new();
    if config.transfer.source_run.is_none() {
        if config.prune.rates.len() > 1 {
            notes.push(format!("transfer uses the first pruning rate only ({rate})"));
        }
        jobs.push(Job {
            tag: format!("source_{}", rate_tag(rate)),
            system: config.system_spec(),
            schedule: config.schedule(rate, None),
        });
    }
    if config.transfer.native_baseline && config.transfer.native_run.is_none() {
        seeds.push((format!("init/{}", target.tag()), init_seed(config.seed, target)));
        jobs.push(Job {
            tag: format!("native_{}", rate_tag(rate)),
            system: target_spec.clone(),
            schedule: config.schedule(rate, None),
        });
    }
    let traces = run_jobs(config, jobs)?;
    let mut diverged = false;
    for (tag, trace) in &traces {
        diverged |= trace.diverged();
        write_trace(art, tag, trace, Some(&config.fit), notes)?;
    }
    let mut traces = traces.into_iter();

    let source_tickets = match &config.transfer.source_run {
        Some(dir) => {
            notes.push(format!("source tickets from {}", dir.display()));
            load_pruned_run(dir, source)?.0
        }
        None => {
            let trace = traces.next().expect("source job").1;
            (0..trace.entries.len()).filter_map(|i| trace.ticket(i)).collect()
        }
    };
    let native = match &config.transfer.native_run {
        Some(dir) => {
            notes.push(format!("native baseline from {}", dir.display()));
            Some(load_pruned_run(dir, target)?.1)
        }
        None => traces.next().map(|(_, t)| t.error_curve()),
    };

    let fresh = fresh_init_seed(config.seed, target);
    if config.transfer.init == crate::config::InitKind::Fresh {
        seeds.push((format!("transfer-init/{}", target.tag()), fresh));
    }
    let tickets: Vec<Ticket<f64>> = stride_indices(source_tickets.len(), config.transfer.ticket_stride)
        .into_iter()
        .map(|i| source_tickets[i].clone())
        .collect();
    let transfer_config = TransferConfig {
        train: config.train_config(),
        t_max_sweep: config.transfer.t_max_sweep.clone(),
        init: config.transfer_init(fresh),
    };
    let direction = format!("{}->{}", source.tag(), target.tag());
    let rows = transfer_evaluate_observed(&tickets, &target_spec, &transfer_config, &direction, |r| {
        eprintln!(
            "[{direction}] d={:.4} t_max={:.4} eps={}",
            r.source_density,
            r.t_max,
            r.epsilon.map_or("diverged".to_string(), |e| format!("{e:.3e}"))
        )
    })?;
    diverged |= rows.iter().any(|r| r.epsilon.is_none());
    art.write("transfer.csv", "transfer", transfer_csv(&rows).as_bytes())?;

    let summary = transfer_summary(&rows, native.as_deref(), config);
    art.write("transfer_summary.txt", "transfer_summary", summary.as_bytes())?;
    Ok(diverged)
}

/// Transferred `(source density, eps)` at the sweep value closest to
/// `t_max`, and that value.
pub fn transfer_curve(rows: &[TransferRow<f64>], t_max: f64) -> (f64, Vec<(f64, f64)>) {
    let closest = rows
        .iter()
        .map(|r| r.t_max)
        .min_by(|a, b| (a - t_max).abs().total_cmp(&(b - t_max).abs()))
        .unwrap_or(t_max);
    let curve = rows
        .iter()
        .filter(|r| r.t_max == closest)
        .filter_map(|r| r.epsilon.map(|e| (r.source_density, e)))
        .collect();
    (closest, curve)
}

fn transfer_summary(rows: &[TransferRow<f64>], native: Option<&[(f64, f64)]>, config: &ExperimentConfig) -> String {
    let tol = config.fit.plateau_tolerance;
    let (t_max, curve) = transfer_curve(rows, config.train.t_max);
    let mut out = String::new();
    let _ = writeln!(out, "t_max = {t_max}");
    let _ = writeln!(out, "transferred_points = {}", curve.len());
    let fmt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    let transferred = plateau_span(&curve, tol);
    let _ = writeln!(out, "transferred_plateau_span = {}", fmt(transferred));
    if let Some(native) = native {
        let native_span = plateau_span(native, tol);
        let _ = writeln!(out, "native_plateau_span = {}", fmt(native_span));
        let ratio = match (transferred, native_span) {
            (Some(t), Some(n)) if n > 0.0 => Some(t / n),
            _ => None,
        };
        let _ = writeln!(out, "plateau_ratio = {}", fmt(ratio));
    }
    out
}
