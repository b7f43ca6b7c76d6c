use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ticketlab::artifacts::{write_atomic, MANIFEST_NAME};
use ticketlab::compare::{compare_runs, read_summary_value};
use ticketlab::run::output_dir;
use ticketlab::{parse_config, run, ExperimentKind, HarnessError, Overrides, RunManifest};

#[derive(Parser)]
#[command(name = "ticketlab", version, about = "Lottery-ticket pruning experiments on Hamiltonian network solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory. Defaults to `<root>/<experiment>-seed<seed>`, where the root is
    /// `$TICKETLAB_OUT` or `./runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// 5e4 epochs and the 1/5/10% rate schedule.
    #[arg(long)]
    paper_fidelity: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense network (train_full).
    Train(Common),
    /// Iterative magnitude pruning (imp_global unless the config says otherwise).
    Prune(Common),
    /// Flow observables and exponents (rg_observables).
    Rgflow(Common),
    /// Pruning run followed by regime segmentation and a power-law fit.
    Fit(Common),
    /// Ticket transfer between systems (transfer_nlo_to_hh by default).
    Transfer(Common),
    /// Compare the flow exponents of two finished runs.
    Compare {
        /// Manifest or run directory of the first run.
        a: PathBuf,
        /// Manifest or run directory of the second run.
        b: PathBuf,
        /// Exponents with |sigma| at or below this are marginal.
        #[arg(long, default_value_t = 0.0)]
        band: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_NAME)
    } else {
        p.to_path_buf()
    }
}

fn execute(common: &Common, default: ExperimentKind) -> Result<(RunManifest, PathBuf), HarnessError> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
        None => String::new(),
    };
    let overrides = Overrides {
        default_experiment: Some(default),
        seed: common.seed,
        output_dir: common.out.clone(),
        paper_fidelity: common.paper_fidelity,
    };
    let config = parse_config(&text, &overrides)?;
    let dir = output_dir(&config);
    eprintln!(
        "{} seed {} ({} epochs, rates {:?}) -> {}",
        config.experiment,
        config.seed,
        config.train.epochs,
        config.prune.rates,
        dir.display()
    );
    Ok((run(&config)?, dir))
}

fn report(manifest: &RunManifest, root: &Path, show: &str) {
    for rec in manifest.artifacts_of(show) {
        let path = root.join(&rec.path);
        if let Ok(text) = fs::read_to_string(&path) {
            println!("== {}\n{}", rec.path, text.trim_end());
        }
    }
    if let Some(rec) = manifest.artifacts.iter().find(|r| r.kind == "trace") {
        println!("first trace: {}", root.join(&rec.path).display());
    }
    for note in &manifest.notes {
        println!("note: {note}");
    }
    println!("status: {}", manifest.status);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, kind, show) = match &cli.command {
        Command::Train(c) => (c, ExperimentKind::TrainFull, "none"),
        Command::Prune(c) => (c, ExperimentKind::ImpGlobal, "sigma"),
        Command::Rgflow(c) => (c, ExperimentKind::RgObservables, "sigma"),
        Command::Fit(c) => (c, ExperimentKind::ImpGlobal, "fit"),
        Command::Transfer(c) => (c, ExperimentKind::TransferNloToHh, "transfer_summary"),
        Command::Compare { a, b, band, common } => {
            let (a, b) = (manifest_path(a), manifest_path(b));
            return match compare_runs(&a, &b, *band) {
                Ok(r) => {
                    println!("{r}");
                    if let Some(out) = &common.out {
                        if let Err(e) = write_atomic(&out.join("compare.csv"), r.to_csv().as_bytes()) {
                            eprintln!("error: {e}");
                            return ExitCode::FAILURE;
                        }
                    }
                    if r.agree() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(3)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    match execute(common, kind) {
        Ok((manifest, root)) => {
            report(&manifest, &root, show);
            if show == "fit" {
                for rec in manifest.artifacts_of("fit") {
                    if let Ok(Some(g)) = read_summary_value(&root.join(&rec.path), "gamma") {
                        println!("{}: gamma = {g}", rec.path);
                    }
                }
            }
            if manifest.status == "ok" {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            match &common.config {
                Some(p) => eprintln!("error: {}: {e}", p.display()),
                None => eprintln!("error: {e}"),
            }
            ExitCode::FAILURE
        }
    }
}
