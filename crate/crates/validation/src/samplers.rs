//! Sampler correctness: prior-only chains and the single-component limit.

use nalgebra::DMatrix;
use nestclust::analysis::incidence_matrix;
use nestclust::basis::SplineBasis;
use nestclust::dist::{self, seeded, std_normal};
use nestclust::mcmc::{batch_means, Pins, RunSettings};
use nestclust::model::{GammaPrior, Hyperparams, NestedDataset, Replicate, Subject};
use nestclust::sampler_mean::{collect_chain_mean, MeanSampler};
use nestclust::sampler_nested::{collect_chain_nested, NestedSampler};

use crate::{timed, Outcome};

const SWEEPS: usize = 500_000;
const BURN: usize = 2_000;
const BATCHES: usize = 100;
const FORWARD: usize = 1_000_000;

fn prior_dataset() -> (NestedDataset, SplineBasis) {
    let x: Vec<f64> = (0..5).map(f64::from).collect();
    let subjects = (0..4)
        .map(|i| Subject {
            id: format!("s{i}"),
            replicates: (0..2)
                .map(|j| Replicate { id: format!("r{j}"), x: x.clone(), y: vec![0.0; 5] })
                .collect(),
        })
        .collect();
    (NestedDataset::new(subjects).unwrap(), SplineBasis::new(vec![2.0], 1).unwrap())
}

fn prior_hyper(dim: usize) -> Hyperparams {
    let mut h = Hyperparams::with_scale(DMatrix::identity(dim, dim));
    // a finite fourth moment of the atom variance keeps the standard error
    // of its second moment well defined
    h.nu1 = 6.0;
    h
}

/// `(mean, standard error)` of `E u` and `E u^2` for `u ~ Beta(a, b)` with
/// Gamma hyperpriors on both shapes, averaging the conditional moments.
fn forward_stick_moments(pa: GammaPrior, pb: GammaPrior, seed: u64) -> [(f64, f64); 2] {
    let mut rng = seeded(seed);
    let mut acc = [[0.0; 2]; 2];
    for _ in 0..FORWARD {
        let a = dist::gamma(&mut rng, pa.shape, pa.rate);
        let b = dist::gamma(&mut rng, pb.shape, pb.rate);
        let m = [a / (a + b), a * (a + 1.0) / ((a + b) * (a + b + 1.0))];
        for k in 0..2 {
            acc[k][0] += m[k];
            acc[k][1] += m[k] * m[k];
        }
    }
    let n = FORWARD as f64;
    acc.map(|[s, ss]| {
        let mean = s / n;
        (mean, ((ss / n - mean * mean) / n).sqrt())
    })
}

fn beta_moments(a: f64, b: f64) -> [(f64, f64); 2] {
    [(a / (a + b), 0.0), (a * (a + 1.0) / ((a + b) * (a + b + 1.0)), 0.0)]
}

/// Compare first and second moments of a trace with forward values.
fn compare(o: &mut Outcome, name: &str, trace: &[f64], want: [(f64, f64); 2]) -> f64 {
    let sq: Vec<f64> = trace.iter().map(|x| x * x).collect();
    let mut worst: f64 = 0.0;
    for (k, (series, (mean, se))) in [trace, sq.as_slice()].into_iter().zip(want).enumerate() {
        let s = batch_means(series, BATCHES).unwrap();
        let z = (s.mean - mean) / (s.se * s.se + se * se).sqrt();
        worst = worst.max(z.abs());
        o.check(
            z.abs() <= 3.0 && s.ess >= 5000.0,
            format!(
                "E[{name}{}]: chain {:.6} +- {:.6}, forward {mean:.6}, z = {z:+.2}, ESS {:.0}",
                if k == 0 { "" } else { "^2" },
                s.mean,
                s.se,
                s.ess
            ),
        );
    }
    worst
}

/// Criterion 8: successive-conditional chains (simulate responses given
/// the state, then sweep) leave the prior invariant.
pub fn geweke() -> Outcome {
    let mut o = Outcome::new(8, "prior-only chains reproduce forward prior moments");
    let (data, basis) = prior_dataset();
    let h = prior_hyper(basis.dim());
    let ((mean_traces, nested_traces), secs) = timed(|| {
        std::thread::scope(|sc| {
            let m = sc.spawn(|| {
                let mut sampler = MeanSampler::new(&data, &basis, h.clone(), 4, Pins::default()).unwrap();
                let mut state = sampler.init_state(11).unwrap();
                state.adapting = false;
                let mut t = [Vec::new(), Vec::new(), Vec::new()];
                for s in 0..SWEEPS + BURN {
                    sampler.simulate_responses(&mut state);
                    sampler.sweep(&mut state).unwrap();
                    if s >= BURN {
                        t[0].push(state.gamma);
                        t[1].push(state.atoms[0].sigma2);
                        t[2].push(state.sticks.fractions()[0]);
                    }
                }
                t
            });
            let n = sc.spawn(|| {
                let mut sampler = NestedSampler::new(&data, &basis, h.clone(), 3, 3, Pins::default()).unwrap();
                let mut state = sampler.init_state(12).unwrap();
                state.adapting = false;
                let mut t = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
                for s in 0..SWEEPS + BURN {
                    sampler.simulate_responses(&mut state);
                    sampler.sweep(&mut state).unwrap();
                    if s >= BURN {
                        t[0].push(state.gamma);
                        t[1].push(state.nu2);
                        t[2].push(state.top.fractions()[0]);
                        t[3].push(state.bottom[0].fractions()[0]);
                    }
                }
                t
            });
            (m.join().unwrap(), n.join().unwrap())
        })
    });
    let gamma = beta_moments(h.eta1, h.eta2);
    let sigma2 = [
        (h.nu2 / (h.nu1 - 1.0), 0.0),
        (h.nu2 * h.nu2 / ((h.nu1 - 1.0) * (h.nu1 - 2.0)), 0.0),
    ];
    let nu2 = [(h.rho / h.psi, 0.0), (h.rho * (h.rho + 1.0) / (h.psi * h.psi), 0.0)];
    let mut worst: f64 = 0.0;
    worst = worst.max(compare(&mut o, "gamma (mean model)", &mean_traces[0], gamma));
    worst = worst.max(compare(&mut o, "sigma2", &mean_traces[1], sigma2));
    worst = worst.max(compare(&mut o, "u1", &mean_traces[2], forward_stick_moments(h.a, h.b, 5)));
    worst = worst.max(compare(&mut o, "gamma (nested model)", &nested_traces[0], gamma));
    worst = worst.max(compare(&mut o, "nu2", &nested_traces[1], nu2));
    worst = worst.max(compare(&mut o, "v1", &nested_traces[2], forward_stick_moments(h.a1, h.b1, 6)));
    worst = worst.max(compare(&mut o, "u11", &nested_traces[3], forward_stick_moments(h.a2, h.b2, 7)));
    o.summary = format!("max |z| = {worst:.2} over {SWEEPS} sweeps per model, {secs:.1} s");
    o
}

/// Six subjects at three overlapping levels, so co-clustering is uncertain.
fn ambiguous_dataset() -> (NestedDataset, SplineBasis) {
    let mut rng = seeded(4);
    let x: Vec<f64> = (0..6).map(|t| t as f64 / 5.0).collect();
    let levels = [0.0, 0.0, 0.25, 0.25, 0.5, 0.5];
    let subjects = levels
        .iter()
        .enumerate()
        .map(|(i, &lvl)| Subject {
            id: format!("s{i}"),
            replicates: (0..2)
                .map(|j| Replicate {
                    id: format!("r{j}"),
                    x: x.clone(),
                    y: x.iter().map(|&t| lvl + 0.3 * t + 0.15 * std_normal(&mut rng)).collect(),
                })
                .collect(),
        })
        .collect();
    (NestedDataset::new(subjects).unwrap(), SplineBasis::equally_spaced(0.0, 1.0, 2, 1).unwrap())
}

/// Criterion 9: the nested model with one bottom component and the mean
/// model with vanishing replicate spread share a subject-partition
/// posterior.
pub fn nesting_collapse() -> Outcome {
    let mut o = Outcome::new(9, "nesting collapse (L = 1 vs mean model with Sigma -> 0)");
    let (data, basis) = ambiguous_dataset();
    let h = Hyperparams::unit_information(&data, &basis).unwrap();
    let d = basis.dim();
    let run = RunSettings::new(22_000, 2_000, 1).unwrap();
    let mean_pins = Pins { sigma: Some(DMatrix::identity(d, d) * 1e-10), ..Pins::default() };
    let mean = MeanSampler::new(&data, &basis, h.clone(), 6, mean_pins).unwrap();
    let nested_pins = Pins { nu2: Some(h.nu2), ..Pins::default() };
    let nested = NestedSampler::new(&data, &basis, h, 6, 1, nested_pins).unwrap();
    let (dm, dn) = std::thread::scope(|s| {
        let m = s.spawn(|| collect_chain_mean(&mean, run, 31).unwrap());
        let n = s.spawn(|| collect_chain_nested(&nested, run, 32).unwrap());
        (m.join().unwrap(), n.join().unwrap())
    });
    let pm: Vec<_> = dm.iter().map(|d| d.subject_partition()).collect();
    let pn: Vec<_> = dn.iter().map(|d| d.subject_partition()).collect();
    let im = incidence_matrix(&pm).unwrap();
    let inn = incidence_matrix(&pn).unwrap();
    let diff = im.max_abs_diff(&inn).unwrap();
    o.check(dm.len() >= 20_000 && dn.len() >= 20_000, format!("{} and {} retained draws", dm.len(), dn.len()));
    let uncertain = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).filter(|&(i, j)| (0.02..0.98).contains(&im.get(i, j))).count();
    o.note(format!("{uncertain} off-diagonal incidence entries strictly between 0.02 and 0.98"));
    o.check(diff <= 0.05, format!("max |incidence difference| = {diff:.4} (limit 0.05)"));
    o.summary = format!("max difference {diff:.4}");
    o
}
