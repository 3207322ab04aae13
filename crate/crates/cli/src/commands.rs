//! Implementations of the `simulate`, `fit`, `summarize`, `diagnose` and
//! `gdp` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nestclust::analysis::{incidence_matrix, point_partition, psrf, reconstruct_curves};
use nestclust::archive::{Draw, DrawWriter, ModelKind};
use nestclust::dist::{derive_seed, seeded};
use nestclust::gdp::{
    expected_new_cluster_prob, growth_constant, partition_structure, simulate_partition, truncation_bound, GdpParams,
    NestedShapes, Truncation,
};
use nestclust::mcmc::{Pins, RunSettings};
use nestclust::sampler_mean::{run_chain_mean, ChainReport, MeanSampler};
use nestclust::sampler_nested::{run_chain_nested, NestedSampler};
use nestclust::simulate::{simulate_dataset, GeneratorSpec};
use rayon::prelude::*;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{read_dataset_file, truth_json, write_dataset};
use crate::error::{CliError, CliResult};
use crate::store::{chain_dir, create_draws, load_chains, write_json, BasisInfo, Manifest, FORMAT, MANIFEST};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Synthetic designs available to `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// Three separated mean curves, one per group; `noise` is a fraction of
    /// the minimum curve separation.
    ThreeMeans,
    /// Two groups with equal mean curves but different curve mixtures;
    /// `noise` is the observation standard deviation.
    Confounded,
}

impl std::str::FromStr for Design {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "three-means" => Ok(Design::ThreeMeans),
            "confounded" => Ok(Design::Confounded),
            other => Err(CliError::usage(format!("unknown design {other:?} (expected three-means or confounded)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub design: Design,
    pub subjects_per_group: usize,
    pub replicates: usize,
    pub noise: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes `dataset.csv` and `truth.json` into `out`.
pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let spec = match args.design {
        Design::ThreeMeans => GeneratorSpec::three_means(args.subjects_per_group, args.replicates, args.noise),
        Design::Confounded => GeneratorSpec::mean_confounded(args.subjects_per_group, args.replicates, args.noise),
    };
    spec.validate().map_err(CliError::from_core_settings)?;
    let mut rng = seeded(args.seed);
    let (data, truth) = simulate_dataset(&mut rng, &spec).map_err(CliError::from_core)?;
    create_dir(&args.out)?;
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf)?;
    let path = args.out.join("dataset.csv");
    std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
    write_json(&args.out.join("truth.json"), &truth_json(&data, &truth))
}

enum Sampler {
    Mean(MeanSampler),
    Nested(NestedSampler),
}

impl Sampler {
    fn run(&self, run: RunSettings, seed: u64, sink: impl FnMut(Draw) -> nestclust::Result<()>) -> CliResult<ChainReport> {
        match self {
            Sampler::Mean(s) => run_chain_mean(s, run, seed, sink),
            Sampler::Nested(s) => run_chain_nested(s, run, seed, sink),
        }
        .map_err(CliError::from_core)
    }
}

/// Runs `config.chains` chains in parallel, one archive directory each.
pub fn fit(config: &RunConfig, dataset: &Path) -> CliResult<Vec<Manifest>> {
    config.validate()?;
    let out = config.out.clone().ok_or_else(|| CliError::usage("an output directory (--out) is required"))?;
    let bytes = std::fs::read(dataset).map_err(|e| CliError::io(dataset, e))?;
    let dataset_sha256 = hex(&Sha256::digest(&bytes));
    let data = read_dataset_file(dataset)?;
    let basis = config.basis(&data)?;
    let hyper = config.hyperparams(&data, &basis)?;
    let run = RunSettings::new(config.sweeps, config.burnin, config.thin).map_err(CliError::from_core_settings)?;
    let sampler = match config.model {
        ModelKind::Mean => MeanSampler::new(&data, &basis, hyper, config.k, Pins::default()).map(Sampler::Mean),
        ModelKind::Nested => {
            NestedSampler::new(&data, &basis, hyper, config.k, config.l, Pins::default()).map(Sampler::Nested)
        }
    }
    .map_err(CliError::from_core)?;

    let config_map: Map<String, Value> =
        config.canonical().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
    let template = Manifest {
        format: FORMAT.to_string(),
        model: config.model.as_str().to_string(),
        chain: 0,
        seed: 0,
        draws: 0,
        config_hash: config.hash(),
        config: config_map,
        dataset_sha256,
        subjects: data.subjects().iter().map(|s| s.id.clone()).collect(),
        replicates: data.subjects().iter().map(|s| s.replicates.iter().map(|r| r.id.clone()).collect()).collect(),
        x_range: {
            let (lo, hi) = data.x_range();
            [lo, hi]
        },
        basis: BasisInfo { knots: basis.knots().to_vec(), degree: basis.degree() },
        acceptance: Vec::new(),
    };
    create_dir(&out)?;
    let results: Vec<CliResult<Manifest>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| {
                let (sampler, template, out) = (&sampler, &template, &out);
                scope.spawn(move || -> CliResult<Manifest> {
                    let dir = chain_dir(out, c);
                    create_dir(&dir)?;
                    let seed = derive_seed(config.seed, c as u64);
                    let mut writer = DrawWriter::new(create_draws(&dir)?).map_err(CliError::from_core)?;
                    let report = sampler.run(run, seed, |d| writer.write(&d))?;
                    let draws = writer.count();
                    writer.finish().map_err(CliError::from_core)?;
                    let manifest = Manifest {
                        chain: c,
                        seed,
                        draws,
                        acceptance: report.acceptance,
                        ..template.clone()
                    };
                    write_json(&dir.join(MANIFEST), &manifest)?;
                    Ok(manifest)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Numerical("chain worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

/// Evenly spaced grid of `n` points over `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|g| if g == n - 1 { hi } else { lo + (hi - lo) * g as f64 / (n - 1) as f64 }).collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `incidence.csv`, `partition.json` and `curves.csv` from the pooled
/// draws of all chains.
pub fn summarize(archives: &[PathBuf], out: &Path, grid_points: usize) -> CliResult<()> {
    if grid_points == 0 {
        return Err(CliError::usage("the reconstruction grid needs at least one point"));
    }
    let chains = load_chains(archives)?;
    let manifest = chains[0].manifest.clone();
    let manifest = &manifest;
    let model = manifest.model_kind()?;
    let basis = manifest.spline_basis()?;
    let draws: Vec<Draw> = chains.into_iter().flat_map(|c| c.draws).collect();
    let n_subj = manifest.subjects.len();
    for d in &draws {
        if d.z.len() != n_subj || (model == ModelKind::Nested && d.c.len() != n_subj) {
            return Err(CliError::data(format!("draw {} does not match the manifest's subjects", d.iteration)));
        }
    }
    let partitions: Vec<_> = draws.iter().map(Draw::subject_partition).collect();
    let inc = incidence_matrix(&partitions).map_err(CliError::from_core)?;
    let (point, _) = point_partition(&partitions, &inc).map_err(CliError::from_core)?;
    create_dir(out)?;

    let mut text = manifest.subjects.iter().map(|s| csv_field(s)).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..n_subj {
        let row: Vec<String> = (0..n_subj).map(|j| inc.get(i, j).to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(&out.join("incidence.csv"), &text)?;

    let labels: Map<String, Value> =
        manifest.subjects.iter().zip(point.labels()).map(|(s, &l)| (s.clone(), Value::from(l))).collect();
    write_json(&out.join("partition.json"), &labels)?;

    let xs = grid(manifest.x_range[0], manifest.x_range[1], grid_points);
    let mut text = String::from("subject_id,replicate_id,grid_x,mean,lo95,hi95\n");
    for (i, sid) in manifest.subjects.iter().enumerate() {
        let reps: Vec<(usize, &str)> = match model {
            ModelKind::Mean => vec![(0, "")],
            ModelKind::Nested => manifest.replicates[i].iter().enumerate().map(|(j, r)| (j, r.as_str())).collect(),
        };
        for (j, rid) in reps {
            let band = reconstruct_curves(&draws, &basis, i, j, &xs).map_err(CliError::from_core)?;
            for g in 0..xs.len() {
                writeln!(
                    text,
                    "{},{},{},{},{},{}",
                    csv_field(sid),
                    csv_field(rid),
                    band.grid[g],
                    band.mean[g],
                    band.lo[g],
                    band.hi[g]
                )
                .expect("writing to a string");
            }
        }
    }
    write_text(&out.join("curves.csv"), &text)
}

/// Statistics monitored for convergence, in output order. `None` marks a
/// statistic the model does not define.
fn monitored(model: ModelKind) -> Vec<(&'static str, Option<fn(&Draw) -> f64>)> {
    let nested = model == ModelKind::Nested;
    vec![
        ("log_posterior", Some(|d: &Draw| d.log_posterior)),
        ("occupied_clusters", Some(|d: &Draw| d.occupied_top() as f64)),
        (
            "occupied_curve_clusters",
            if nested { Some(|d: &Draw| d.occupied_curve_clusters() as f64) } else { None },
        ),
        ("omega_norm", Some(|d: &Draw| d.omega_norm)),
        ("sigma_norm", if nested { None } else { Some(|d: &Draw| d.sigma_norm.unwrap_or(f64::NAN)) }),
    ]
}

/// Writes `psrf.json`: one entry per monitored statistic, `null` when the
/// statistic is absent for the model or its PSRF is undefined.
pub fn diagnose(archives: &[PathBuf], out: &Path) -> CliResult<()> {
    let chains = load_chains(archives)?;
    if chains.len() < 2 {
        return Err(CliError::usage("diagnose needs at least two chains"));
    }
    let n = chains[0].draws.len();
    if chains.iter().any(|c| c.draws.len() != n) {
        return Err(CliError::data("chains hold different numbers of draws"));
    }
    let model = chains[0].manifest.model_kind()?;
    let mut stats = Map::new();
    for (name, f) in monitored(model) {
        let value = match f {
            None => Value::Null,
            Some(f) => {
                let traces: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(f).collect()).collect();
                if traces.iter().flatten().any(|v| !v.is_finite()) {
                    Value::Null
                } else {
                    match psrf(&traces) {
                        Ok(r) => Value::from(r),
                        Err(nestclust::Error::Undefined(_)) => Value::Null,
                        Err(e) => return Err(CliError::from_core(e)),
                    }
                }
            }
        };
        stats.insert(name.to_string(), value);
    }
    let mut root = Map::new();
    root.insert("model".into(), Value::from(model.as_str()));
    root.insert("chains".into(), Value::from(chains.len()));
    root.insert("draws_per_chain".into(), Value::from(n));
    root.insert("psrf".into(), Value::Object(stats));
    create_dir(out)?;
    write_json(&out.join("psrf.json"), &Value::Object(root))
}

/// One row of `growth.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthRow {
    pub n: usize,
    pub ez_exact: f64,
    pub ew_exact: f64,
    pub ew_approx: f64,
    pub ez_mc: f64,
    pub mc_se: f64,
}

/// Closed-form cluster growth for `n = 1..=n_max` next to a Monte Carlo
/// estimate from `reps` simulated partitions. Each replicate has its own
/// seed stream and counts are summed exactly, so results do not depend on
/// the thread count.
pub fn growth_table(params: GdpParams, n_max: usize, reps: usize, seed: u64) -> CliResult<Vec<GrowthRow>> {
    if n_max == 0 || reps < 2 {
        return Err(CliError::usage("growth needs n >= 1 and at least two replicates"));
    }
    let (sum, sumsq) = (0..reps)
        .into_par_iter()
        .map(|r| -> CliResult<(Vec<u64>, Vec<u64>)> {
            let mut rng = seeded(derive_seed(seed, r as u64));
            let p = simulate_partition(&mut rng, params, n_max).map_err(CliError::from_core)?;
            let mut seen = 0u64;
            let mut s = vec![0u64; n_max];
            let mut q = vec![0u64; n_max];
            for (m, &l) in p.labels().iter().enumerate() {
                seen = seen.max(l as u64 + 1);
                s[m] = seen;
                q[m] = seen * seen;
            }
            Ok((s, q))
        })
        .try_reduce(
            || (vec![0u64; n_max], vec![0u64; n_max]),
            |(mut s1, mut q1), (s2, q2)| {
                for m in 0..n_max {
                    s1[m] += s2[m];
                    q1[m] += q2[m];
                }
                Ok((s1, q1))
            },
        )?;
    let c = growth_constant(params);
    let r = reps as f64;
    let mut ez = 0.0;
    let mut comp = 0.0;
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let ew = expected_new_cluster_prob(params, n).map_err(CliError::from_core)?;
        let y = ew - comp;
        let t = ez + y;
        comp = (t - ez) - y;
        ez = t;
        let mean = sum[n - 1] as f64 / r;
        let var = ((sumsq[n - 1] as f64 - sum[n - 1] as f64 * mean) / (r - 1.0)).max(0.0);
        rows.push(GrowthRow {
            n,
            ez_exact: ez,
            ew_exact: ew,
            ew_approx: c * (n as f64).powf(-params.a),
            ez_mc: mean,
            mc_se: (var / r).sqrt(),
        });
    }
    Ok(rows)
}

pub fn growth(params: GdpParams, n_max: usize, reps: usize, seed: u64, out: &Path) -> CliResult<()> {
    let rows = growth_table(params, n_max, reps, seed)?;
    let mut text = String::from("n,EZ_exact,EW_exact,EW_approx,EZ_mc,mc_se\n");
    for r in rows {
        writeln!(text, "{},{},{},{},{},{}", r.n, r.ez_exact, r.ew_exact, r.ew_approx, r.ez_mc, r.mc_se)
            .expect("writing to a string");
    }
    create_dir(out)?;
    write_text(&out.join("growth.csv"), &text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundArgs {
    pub shapes: NestedShapes,
    pub k: Truncation,
    pub l: Truncation,
    pub j: usize,
    pub n: usize,
}

/// Truncation bound; also written to `bound.json` when `out` is given.
pub fn bound(args: &BoundArgs, out: Option<&Path>) -> CliResult<f64> {
    let value = truncation_bound(args.shapes, args.k, args.l, args.j, args.n).map_err(CliError::from_core_settings)?;
    if let Some(dir) = out {
        let NestedShapes { a1, b1, a2, b2 } = args.shapes;
        let mut root = Map::new();
        for (k, v) in [("a1", a1), ("b1", b1), ("a2", a2), ("b2", b2)] {
            root.insert(k.into(), Value::from(v));
        }
        root.insert("K".into(), Value::from(args.k.to_string()));
        root.insert("L".into(), Value::from(args.l.to_string()));
        root.insert("J".into(), Value::from(args.j));
        root.insert("n".into(), Value::from(args.n));
        root.insert("bound".into(), Value::from(value));
        create_dir(dir)?;
        write_json(&dir.join("bound.json"), &Value::Object(root))?;
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureArgs {
    /// Fixed `a / (a + b)`; `None` traces the Dirichlet process (`a = 1`).
    pub mean_fraction: Option<f64>,
    /// Range of `a + b` (or of `b` for the Dirichlet process), log-spaced.
    pub total_min: f64,
    pub total_max: f64,
    pub points: usize,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

/// One row per shape pair: `(a, b, summary)`.
pub fn structure_table(args: &StructureArgs) -> CliResult<Vec<(f64, f64, nestclust::gdp::StructureSummary)>> {
    if args.points < 2 || !(args.total_min > 0.0 && args.total_max > args.total_min) {
        return Err(CliError::usage("structure needs at least two points over 0 < min < max"));
    }
    if let Some(m) = args.mean_fraction {
        if !(m > 0.0 && m < 1.0) {
            return Err(CliError::usage("mean fraction must lie in (0, 1)"));
        }
    }
    let (lmin, lmax) = (args.total_min.ln(), args.total_max.ln());
    let mut rows = Vec::with_capacity(args.points);
    for g in 0..args.points {
        let t = (lmin + (lmax - lmin) * g as f64 / (args.points - 1) as f64).exp();
        let (a, b) = match args.mean_fraction {
            Some(m) => (m * t, (1.0 - m) * t),
            None => (1.0, t),
        };
        let params = GdpParams::new(a, b).map_err(CliError::from_core_settings)?;
        let s = partition_structure(params, args.n, args.reps, derive_seed(args.seed, g as u64))
            .map_err(CliError::from_core_settings)?;
        rows.push((a, b, s));
    }
    Ok(rows)
}

pub fn structure(args: &StructureArgs, out: &Path) -> CliResult<()> {
    let rows = structure_table(args)?;
    let mut text = String::from("a,b,mean_clusters,se_clusters,mean_largest,se_largest,mean_block_size\n");
    for (a, b, s) in rows {
        writeln!(
            text,
            "{a},{b},{},{},{},{},{}",
            s.mean_clusters, s.se_clusters, s.mean_largest, s.se_largest, s.mean_block_size
        )
        .expect("writing to a string");
    }
    create_dir(out)?;
    write_text(&out.join("structure.csv"), &text)
}
