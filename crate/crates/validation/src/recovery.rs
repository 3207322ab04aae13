//! Posterior recovery of simulated cluster structure.

use nestclust::analysis::{adjusted_rand, incidence_matrix, point_partition};
use nestclust::archive::Draw;
use nestclust::basis::SplineBasis;
use nestclust::dist::{derive_seed, seeded};
use nestclust::gdp::Partition;
use nestclust::mcmc::{Pins, RunSettings};
use nestclust::model::{Hyperparams, NestedDataset};
use nestclust::sampler_mean::{collect_chain_mean, MeanSampler};
use nestclust::sampler_nested::{collect_chain_nested, NestedSampler};
use nestclust::simulate::{simulate_dataset, GeneratorSpec, SimulatedTruth};

use crate::{timed, Outcome};

const SEEDS: u64 = 4;

fn setting(data: &NestedDataset) -> (SplineBasis, Hyperparams) {
    let (lo, hi) = data.x_range();
    let basis = SplineBasis::equally_spaced(lo, hi, 13, 1).unwrap();
    let hyper = Hyperparams::unit_information(data, &basis).unwrap();
    (basis, hyper)
}

fn simulated(spec: &GeneratorSpec, s: u64) -> (NestedDataset, SimulatedTruth) {
    let mut rng = seeded(derive_seed(100, s));
    simulate_dataset(&mut rng, spec).unwrap()
}

/// Adjusted Rand index of the point partition against the true groups.
fn point_ari(draws: &[Draw], truth: &[usize]) -> f64 {
    let parts: Vec<Partition> = draws.iter().map(|d| d.subject_partition()).collect();
    let inc = incidence_matrix(&parts).unwrap();
    let (best, _) = point_partition(&parts, &inc).unwrap();
    adjusted_rand(&best, &Partition::from_labels(truth)).unwrap()
}

fn fit_mean(data: &NestedDataset, run: RunSettings, seed: u64) -> (Vec<Draw>, f64) {
    let (basis, hyper) = setting(data);
    let sampler = MeanSampler::new(data, &basis, hyper, 40, Pins::default()).unwrap();
    timed(|| collect_chain_mean(&sampler, run, seed).unwrap())
}

fn fit_nested(data: &NestedDataset, run: RunSettings, seed: u64) -> (Vec<Draw>, f64) {
    let (basis, hyper) = setting(data);
    let sampler = NestedSampler::new(data, &basis, hyper, 40, 30, Pins::default()).unwrap();
    timed(|| collect_chain_nested(&sampler, run, seed).unwrap())
}

/// 2000 retained sweeps after 500 burn-in.
fn run_settings() -> RunSettings {
    RunSettings::new(2500, 500, 1).unwrap()
}

/// Criterion 6: the mean model recovers three well-separated groups.
pub fn mean_model_recovery() -> Outcome {
    let mut o = Outcome::new(6, "mean-model recovery of three separated groups");
    let spec = GeneratorSpec::three_means(10, 5, 0.2);
    let results: Vec<(f64, f64)> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..SEEDS)
            .map(|s| {
                let spec = &spec;
                sc.spawn(move || {
                    let (data, truth) = simulated(spec, s);
                    let (draws, secs) = fit_mean(&data, run_settings(), derive_seed(200, s));
                    (point_ari(&draws, &truth.subject_labels), secs)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut hits = 0;
    let mut slowest: f64 = 0.0;
    for (s, (ari, secs)) in results.iter().enumerate() {
        hits += usize::from(*ari >= 0.9);
        slowest = slowest.max(*secs);
        o.note(format!("seed {s}: ARI {ari:.3}, chain {secs:.1} s"));
    }
    o.check(hits >= 3, format!("{hits} of {SEEDS} seeds reach ARI >= 0.9 (need 3)"));
    o.check(slowest < 300.0, format!("slowest chain {slowest:.1} s (limit 300 s)"));
    o.summary = format!("{hits}/{SEEDS} seeds with ARI >= 0.9");
    o
}

/// Criterion 7: only the nested model separates groups that share a mean
/// curve but differ in how their curves are mixed.
pub fn nested_discrimination() -> Outcome {
    let mut o = Outcome::new(7, "nested vs mean model on mean-confounded groups");
    let spec = GeneratorSpec::mean_confounded(10, 6, 0.05);
    let results: Vec<(f64, f64, f64, f64)> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..SEEDS)
            .map(|s| {
                let spec = &spec;
                sc.spawn(move || {
                    let (data, truth) = simulated(spec, s);
                    let seed = derive_seed(300, s);
                    let (nested, mean) = std::thread::scope(|inner| {
                        let n = inner.spawn(|| fit_nested(&data, run_settings(), seed));
                        let m = inner.spawn(|| fit_mean(&data, run_settings(), seed));
                        (n.join().unwrap(), m.join().unwrap())
                    });
                    let labels = &truth.subject_labels;
                    (point_ari(&nested.0, labels), point_ari(&mean.0, labels), nested.1, mean.1)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut hits = 0;
    let mut slowest: f64 = 0.0;
    for (s, (nested, mean, tn, tm)) in results.iter().enumerate() {
        let ok = *nested >= 0.8 && *mean <= 0.3;
        hits += usize::from(ok);
        slowest = slowest.max(tn.max(*tm));
        o.note(format!("seed {s}: nested ARI {nested:.3} ({tn:.1} s), mean ARI {mean:.3} ({tm:.1} s)"));
    }
    o.check(hits >= 3, format!("{hits} of {SEEDS} seeds have nested ARI >= 0.8 and mean ARI <= 0.3 (need 3)"));
    o.check(slowest < 600.0, format!("slowest chain {slowest:.1} s (limit 600 s)"));
    o.summary = format!("{hits}/{SEEDS} seeds discriminate");
    o
}
