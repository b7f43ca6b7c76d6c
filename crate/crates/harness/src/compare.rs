//! Side-by-side comparison of the flow exponents of two runs.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use crate::artifacts::RunManifest;
use crate::{HarnessError, Result};

/// A comma-separated file without quoting, as written by this tool.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines.next()?.split(',').map(str::to_string).collect::<Vec<_>>();
        let rows = lines
            .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        rows.iter().all(|r| r.len() == header.len()).then_some(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).ok_or_else(|| HarnessError::Compare(format!("{}: malformed CSV", path.display())))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column; empty cells become `None`.
    pub fn f64_column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column(name)?;
        self.rows
            .iter()
            .map(|r| if r[i].is_empty() { Some(None) } else { r[i].parse().ok().map(Some) })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaClass {
    Relevant,
    Irrelevant,
    Marginal,
    Undetermined,
}

impl SigmaClass {
    /// `|sigma| <= band` is marginal; the default band of 0 compares pure
    /// signs.
    pub fn of(sigma: Option<f64>, band: f64) -> Self {
        match sigma {
            None => SigmaClass::Undetermined,
            Some(s) if s.abs() <= band => SigmaClass::Marginal,
            Some(s) if s > 0.0 => SigmaClass::Relevant,
            Some(_) => SigmaClass::Irrelevant,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SigmaClass::Relevant => "relevant",
            SigmaClass::Irrelevant => "irrelevant",
            SigmaClass::Marginal => "marginal",
            SigmaClass::Undetermined => "undetermined",
        }
    }
}

/// Per-layer exponents of one run at one pruning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub system: String,
    pub rate: f64,
    pub sigma: Vec<Option<f64>>,
}

/// Exponent sets in `sigma.csv`, one per rate, in file order.
pub fn read_sigma(path: &Path) -> Result<Vec<SigmaSet>> {
    let t = Table::read(path)?;
    let bad = || HarnessError::Compare(format!("{}: unexpected sigma columns", path.display()));
    let (sys, rate, layer, sigma) = (
        t.column("system").ok_or_else(bad)?,
        t.column("rate").ok_or_else(bad)?,
        t.column("layer").ok_or_else(bad)?,
        t.column("sigma").ok_or_else(bad)?,
    );
    let mut sets: Vec<SigmaSet> = Vec::new();
    for row in &t.rows {
        let r: f64 = row[rate].parse().map_err(|_| bad())?;
        let l: usize = row[layer].parse().map_err(|_| bad())?;
        let s = if row[sigma].is_empty() { None } else { Some(row[sigma].parse().map_err(|_| bad())?) };
        let idx = match sets.iter().position(|x| x.rate == r && x.system == row[sys]) {
            Some(i) => i,
            None => {
                sets.push(SigmaSet {
                    system: row[sys].clone(),
                    rate: r,
                    sigma: Vec::new(),
                });
                sets.len() - 1
            }
        };
        let set = &mut sets[idx];
        if l == 0 || l != set.sigma.len() + 1 {
            return Err(bad());
        }
        set.sigma.push(s);
    }
    Ok(sets)
}

/// The `key = value` line of a fit summary.
pub fn read_summary_value(path: &Path, key: &str) -> Result<Option<f64>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(text.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k.trim() == key).then(|| v.trim().parse().ok()).flatten()
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerComparison {
    /// 1-indexed.
    pub layer: usize,
    pub sigma_a: Option<f64>,
    pub sigma_b: Option<f64>,
    pub class_a: SigmaClass,
    pub class_b: SigmaClass,
}

impl LayerComparison {
    pub fn agrees(&self) -> bool {
        self.class_a == self.class_b && self.class_a != SigmaClass::Undetermined
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    pub set_a: SigmaSet,
    pub set_b: SigmaSet,
    pub layers: Vec<LayerComparison>,
    pub gamma_a: Option<f64>,
    pub gamma_b: Option<f64>,
}

impl CompareReport {
    /// Same classification in every layer.
    pub fn agree(&self) -> bool {
        self.set_a.sigma.len() == self.set_b.sigma.len() && self.layers.iter().all(LayerComparison::agrees)
    }

    /// `layer,sigma_a,sigma_b,class_a,class_b,agree`.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("layer,sigma_a,sigma_b,class_a,class_b,agree\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                l.layer,
                cell(l.sigma_a),
                cell(l.sigma_b),
                l.class_a.label(),
                l.class_b.label(),
                l.agrees()
            );
        }
        out
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(
            f,
            "layer  {:>10} p={:<6} {:>10} p={:<6}",
            self.set_a.system, self.set_a.rate, self.set_b.system, self.set_b.rate
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>5}  {:>12} {:<8} {:>12} {:<8}{}",
                l.layer,
                cell(l.sigma_a),
                l.class_a.label(),
                cell(l.sigma_b),
                l.class_b.label(),
                if l.agrees() { "" } else { "  differs" }
            )?;
        }
        writeln!(f, "gamma  {:>12} {:>21}", cell(self.gamma_a), cell(self.gamma_b))?;
        write!(
            f,
            "verdict: {}",
            if self.agree() { "same sign pattern" } else { "sign patterns differ" }
        )
    }
}

fn run_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn first_sigma(manifest_path: &Path, manifest: &RunManifest) -> Result<SigmaSet> {
    let rec = manifest.artifacts_of("sigma").next().ok_or_else(|| {
        HarnessError::Compare(format!(
            "{}: run has no flow exponents (experiment {})",
            manifest_path.display(),
            manifest.experiment
        ))
    })?;
    read_sigma(&run_dir(manifest_path).join(&rec.path))?
        .into_iter()
        .next()
        .ok_or_else(|| HarnessError::Compare(format!("{}: sigma table is empty", manifest_path.display())))
}

fn first_gamma(manifest_path: &Path, manifest: &RunManifest) -> Result<Option<f64>> {
    match manifest.artifacts_of("fit").next() {
        Some(rec) => read_summary_value(&run_dir(manifest_path).join(&rec.path), "gamma"),
        None => Ok(None),
    }
}

/// Compare the exponents of the first pruning rate of each run.
pub fn compare_runs(manifest_a: &Path, manifest_b: &Path, band: f64) -> Result<CompareReport> {
    let (ma, mb) = (RunManifest::load(manifest_a)?, RunManifest::load(manifest_b)?);
    let set_a = first_sigma(manifest_a, &ma)?;
    let set_b = first_sigma(manifest_b, &mb)?;
    Ok(CompareReport {
        run_a: manifest_a.to_path_buf(),
        run_b: manifest_b.to_path_buf(),
        layers: compare_sets(&set_a, &set_b, band),
        gamma_a: first_gamma(manifest_a, &ma)?,
        gamma_b: first_gamma(manifest_b, &mb)?,
        set_a,
        set_b,
    })
}

pub fn compare_sets(a: &SigmaSet, b: &SigmaSet, band: f64) -> Vec<LayerComparison> {
    let n = a.sigma.len().max(b.sigma.len());
    (0..n)
        .map(|i| {
            let sa = a.sigma.get(i).copied().flatten();
            let sb = b.sigma.get(i).copied().flatten();
            LayerComparison {
                layer: i + 1,
                sigma_a: sa,
                sigma_b: sb,
                class_a: SigmaClass::of(sa, band),
                class_b: SigmaClass::of(sb, band),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::Artifacts;

    fn fake_run(dir: &Path, sigma: &[f64]) -> PathBuf {
        let mut art = Artifacts::new(dir).unwrap();
        let mut csv = String::from("system,rate,layer,sigma,steps_used\n");
        for (i, s) in sigma.iter().enumerate() {
            csv.push_str(&format!("NLO,0.05,{},{s},20\n", i + 1));
        }
        art.write("sigma.csv", "sigma", csv.as_bytes()).unwrap();
        art.write("fit_p0.05.txt", "fit", b"c = 0.1\ngamma = 1.25\n").unwrap();
        art.finish(RunManifest {
            tool: "ticketlab".into(),
            version: "0".into(),
            experiment: "imp_global".into(),
            seed: 1,
            config_hash: String::new(),
            config: serde_json::Value::Null,
            init_seeds: Vec::new(),
            artifacts: Vec::new(),
            status: "ok".into(),
            notes: Vec::new(),
            wall_clock_seconds: 0.0,
        })
        .unwrap();
        dir.join(crate::artifacts::MANIFEST_NAME)
    }

    #[test]
    fn run_agrees_with_itself() {
        let dir = tempfile::tempdir().unwrap();
        let m = fake_run(dir.path(), &[0.31, -0.01, 0.74]);
        let report = compare_runs(&m, &m, 0.0).unwrap();
        assert!(report.agree());
        assert_eq!(report.set_a, report.set_b);
        assert_eq!(report.gamma_a, Some(1.25));
        assert_eq!(report.layers[1].class_a, SigmaClass::Irrelevant);
    }

    #[test]
    fn shuffled_layers_disagree() {
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let a = fake_run(da.path(), &[0.31, -0.01, 0.74]);
        let b = fake_run(db.path(), &[-0.01, 0.74, 0.31]);
        let report = compare_runs(&a, &b, 0.0).unwrap();
        assert!(!report.agree());
        assert!(report.to_string().contains("sign patterns differ"));
    }

    #[test]
    fn band_marks_marginal_layers() {
        assert_eq!(SigmaClass::of(Some(-0.01), 0.05), SigmaClass::Marginal);
        assert_eq!(SigmaClass::of(Some(-0.01), 0.0), SigmaClass::Irrelevant);
        assert_eq!(SigmaClass::of(None, 0.0), SigmaClass::Undetermined);
    }

    #[test]
    fn missing_sigma_is_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path()).unwrap();
        let m = art
            .finish(RunManifest {
                tool: "ticketlab".into(),
                version: "0".into(),
                experiment: "train_full".into(),
                seed: 1,
                config_hash: String::new(),
                config: serde_json::Value::Null,
                init_seeds: Vec::new(),
                artifacts: Vec::new(),
                status: "ok".into(),
                notes: Vec::new(),
                wall_clock_seconds: 0.0,
            })
            .unwrap();
        assert_eq!(m.experiment, "train_full");
        let path = dir.path().join(crate::artifacts::MANIFEST_NAME);
        let err = compare_runs(&path, &path, 0.0).unwrap_err().to_string();
        assert!(err.contains("no flow exponents"), "{err}");
    }
}
