use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ticketlab::artifacts::{sha256_hex, MANIFEST_NAME};
use ticketlab::{parse_config, run, ExperimentKind, Overrides, RunManifest};

const QUICK: &str = r#"
[arch]
hidden = [6, 6]
[train]
epochs = 40
grid_points = 16
t_max = 2.0
[prune]
rates = [0.2, 0.3]
max_iterations = 3
[transfer]
t_max_sweep = [2.0]
ticket_stride = 2
"#;

fn config(kind: ExperimentKind, dir: &Path, parallelism: usize) -> ticketlab::ExperimentConfig {
    let mut c = parse_config(
        QUICK,
        &Overrides {
            default_experiment: Some(kind),
            seed: Some(11),
            output_dir: Some(dir.to_path_buf()),
            paper_fidelity: false,
        },
    )
    .unwrap();
    c.parallelism = parallelism;
    c
}

fn files(root: &Path) -> BTreeSet<String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeSet<String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

fn numeric_outputs(root: &Path) -> Vec<(String, Vec<u8>)> {
    files(root)
        .into_iter()
        // The config records the output directory; the manifest records timing.
        .filter(|f| f != MANIFEST_NAME && f != "config.toml")
        .map(|f| {
            let bytes = fs::read(root.join(&f)).unwrap();
            (f, bytes)
        })
        .collect()
}

#[test]
fn manifest_lists_exactly_what_was_written() {
    for kind in ExperimentKind::ALL {
        let dir = tempfile::tempdir().unwrap();
        let m = run(&config(kind, dir.path(), 1)).unwrap();
        let listed: BTreeSet<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
        let mut on_disk = files(dir.path());
        assert!(on_disk.remove(MANIFEST_NAME));
        assert_eq!(listed, on_disk, "{kind}");
        for a in &m.artifacts {
            assert_eq!(sha256_hex(&fs::read(dir.path().join(&a.path)).unwrap()), a.sha256);
        }
        assert_eq!(RunManifest::load(&dir.path().join(MANIFEST_NAME)).unwrap(), m);
        assert_eq!(m.status, "ok");
    }
}

#[test]
fn reruns_and_parallel_runs_are_byte_identical() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run(&config(ExperimentKind::ImpGlobal, a.path(), 1)).unwrap();
    let mb = run(&config(ExperimentKind::ImpGlobal, b.path(), 1)).unwrap();
    let mc = run(&config(ExperimentKind::ImpGlobal, c.path(), 2)).unwrap();
    assert_eq!(numeric_outputs(a.path()), numeric_outputs(b.path()));
    assert_eq!(numeric_outputs(a.path()), numeric_outputs(c.path()));
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.config_hash, mc.config_hash);
    let listed = |m: RunManifest| m.artifacts.into_iter().filter(|r| r.path != "config.toml").collect::<Vec<_>>();
    assert_eq!(listed(ma), listed(mc));
}

#[test]
fn imp_trace_follows_geometric_density() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(ExperimentKind::ImpGlobal, dir.path(), 1);
    c.prune.rates = vec![0.05];
    c.arch.hidden = vec![20, 20];
    run(&c).unwrap();
    let trace = ticketlab::compare::Table::read(&dir.path().join("trace_p0.05.csv")).unwrap();
    let d = trace.f64_column("density").unwrap();
    let unmasked = trace.f64_column("unmasked").unwrap();
    let total = unmasked[0].unwrap();
    let mut expected = total;
    for (n, (dn, un)) in d.iter().zip(&unmasked).enumerate() {
        assert_eq!(un.unwrap(), expected, "iteration {n}");
        assert!((dn.unwrap() - 0.95f64.powi(n as i32)).abs() < 0.02);
        expected -= (0.05 * expected + 1e-9).floor();
    }
}

#[test]
fn transfer_from_existing_runs_skips_pruning() {
    let (src, native, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&config(ExperimentKind::ImpGlobal, src.path(), 1)).unwrap();
    let mut hh = config(ExperimentKind::ImpGlobal, native.path(), 1);
    hh.system.kind = "HH".into();
    hh.system.initial_state = ticketlab_core::SystemKind::HenonHeiles.default_initial_state();
    run(&hh).unwrap();

    let mut t = config(ExperimentKind::TransferNloToHh, out.path(), 1);
    t.transfer.source_run = Some(src.path().to_path_buf());
    t.transfer.native_run = Some(native.path().to_path_buf());
    let m = run(&t).unwrap();
    assert!(m.artifacts_of("trace").next().is_none());
    let rows = ticketlab::compare::Table::read(&out.path().join("transfer.csv")).unwrap();
    // Four tickets at stride 2: iterations 0, 2 and the last one.
    assert_eq!(rows.rows.len(), 3);
    assert!(rows.rows.iter().all(|r| r[4] == "NLO->HH"));

    // Wrong system is refused.
    t.transfer.native_run = Some(src.path().to_path_buf());
    let err = run(&t).unwrap_err().to_string();
    assert!(err.contains("expected HH"), "{err}");
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ticketlab"))
}

#[test]
fn cli_runs_and_reports_config_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("quick.toml");
    fs::write(&cfg, QUICK).unwrap();
    let out = dir.path().join("root");
    let status = Command::new(bin())
        .args(["prune", "--config"])
        .arg(&cfg)
        .args(["--seed", "5"])
        .env("TICKETLAB_OUT", &out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let manifest = RunManifest::load(&out.join("imp_global-seed5").join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.seed, 5);

    let cmp = Command::new(bin())
        .arg("compare")
        .arg(out.join("imp_global-seed5"))
        .arg(out.join("imp_global-seed5"))
        .output()
        .unwrap();
    assert!(cmp.status.success());
    assert!(String::from_utf8_lossy(&cmp.stdout).contains("same sign pattern"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[prune]\nrates = [0.05]\n\n[train]\nlearning_rate = -1.0\n").unwrap();
    let r = Command::new(bin()).args(["train", "--config"]).arg(&bad).output().unwrap();
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("line 5"), "{err}");
}
