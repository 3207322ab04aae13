//! Convergence diagnostics and reproducibility of the command-line tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nestclust::analysis::psrf;
use nestclust::dist::{seeded, std_normal};

use crate::Outcome;

/// Criterion 10: Gelman-Rubin factor on duplicated and divergent chains.
pub fn diagnostics() -> Outcome {
    let mut o = Outcome::new(10, "potential scale reduction factor");
    let mut worst: f64 = 0.0;
    for n in [2usize, 10, 1000, 50_000] {
        let mut rng = seeded(n as u64);
        let chain: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let got = psrf(&[chain.clone(), chain]).unwrap();
        let want = ((n as f64 - 1.0) / n as f64).sqrt();
        let err = (got - want).abs();
        worst = worst.max(err);
        o.check(err <= 1e-12, format!("duplicated chains, n = {n}: {got:.15} vs {want:.15}"));
    }
    let mut rng = seeded(99);
    let a: Vec<f64> = (0..1000).map(|_| std_normal(&mut rng)).collect();
    let b: Vec<f64> = (0..1000).map(|_| 3.0 + std_normal(&mut rng)).collect();
    let drifting: Vec<f64> = (0..1000).map(|t| t as f64 / 200.0 + std_normal(&mut rng)).collect();
    let split = psrf(&[a.clone(), b]).unwrap();
    let drift = psrf(&[a, drifting]).unwrap();
    o.check(split > 1.2, format!("chains centred at 0 and 3: {split:.3}"));
    o.check(drift > 1.2, format!("stationary vs drifting chain: {drift:.3}"));
    o.summary = format!("duplicate error {worst:.1e}, divergent {split:.2} and {drift:.2}");
    o
}

/// Every regular file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Every subcommand, writing under `root`. Returns the exit codes.
fn run_all(root: &Path) -> Vec<(String, i32)> {
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    let commands: Vec<Vec<String>> = vec![
        vec!["simulate", "--design", "three-means", "--subjects-per-group", "3", "--replicates", "3", "--seed", "5", "--out", &p("sim3")],
        vec!["simulate", "--design", "confounded", "--subjects-per-group", "3", "--replicates", "4", "--noise", "0.05", "--seed", "6", "--out", &p("simc")],
        vec!["fit", &p("sim3/dataset.csv"), "--model", "mean", "--K", "10", "--sweeps", "150", "--burnin", "50", "--chains", "2", "--seed", "9", "--out", &p("fit_mean")],
        vec!["fit", &p("simc/dataset.csv"), "--model", "nested", "--K", "8", "--L", "5", "--sweeps", "150", "--burnin", "50", "--chains", "2", "--seed", "9", "--out", &p("fit_nested")],
        vec!["summarize", &p("fit_mean"), "--grid", "20", "--out", &p("sum_mean")],
        vec!["summarize", &p("fit_nested"), "--grid", "20", "--out", &p("sum_nested")],
        vec!["diagnose", &p("fit_mean"), "--out", &p("diag_mean")],
        vec!["diagnose", &p("fit_nested"), "--out", &p("diag_nested")],
        vec!["gdp", "growth", "--a", "0.5", "--b", "2", "--n", "200", "--reps", "500", "--seed", "3", "--out", &p("growth")],
        vec!["gdp", "bound", "--a1", "1", "--b1", "1", "--K", "21", "--L", "inf", "--J", "10", "--out", &p("bound")],
        vec!["gdp", "structure", "--mean-fraction", "0.5", "--points", "4", "--n", "200", "--reps", "500", "--seed", "3", "--out", &p("structure")],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    commands
        .into_iter()
        .map(|args| {
            let label = format!("{} {}", args[0], if args[0] == "gdp" { &args[1] } else { "" });
            let code = nestclust_cli::run(std::iter::once("nestclust".to_string()).chain(args));
            (label.trim().to_string(), code)
        })
        .collect()
}

/// Criterion 11: re-running every command with the same seed and
/// configuration reproduces every artifact byte for byte.
pub fn determinism() -> Outcome {
    let mut o = Outcome::new(11, "byte-identical artifacts on re-run");
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let codes_a = run_all(first.path());
    let codes_b = run_all(second.path());
    for ((label, a), (_, b)) in codes_a.iter().zip(&codes_b) {
        o.check(*a == 0 && *b == 0, format!("{label}: exit codes {a} and {b}"));
    }
    let snap_a = snapshot(first.path());
    let snap_b = snapshot(second.path());
    let names_match = snap_a.keys().eq(snap_b.keys());
    o.check(names_match, format!("{} artifacts in each run, same relative paths", snap_a.len()));
    let differing: Vec<String> = snap_a
        .iter()
        .filter(|(k, v)| snap_b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    o.check(differing.is_empty(), format!("artifacts with differing bytes: {differing:?}"));
    o.summary = format!("{} artifacts compared, {} differ", snap_a.len(), differing.len());
    o
}
