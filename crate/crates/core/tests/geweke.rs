//! Successive-conditional prior checks: alternately simulate responses given
//! the state and run one sweep given the responses. The chain then targets
//! the prior, so marginal moments must match forward prior draws.

use nalgebra::DMatrix;
use nestclust::basis::SplineBasis;
use nestclust::dist::{self, seeded};
use nestclust::mcmc::{batch_means, Pins, TraceSummary};
use nestclust::model::{Hyperparams, NestedDataset, Replicate, Subject};
use nestclust::sampler_mean::MeanSampler;
use nestclust::sampler_nested::NestedSampler;

const SWEEPS: usize = 500_000;
const BURN: usize = 2_000;
const BATCHES: usize = 100;
const FORWARD: usize = 1_000_000;

fn dataset() -> (NestedDataset, SplineBasis) {
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

fn hyper(dim: usize) -> Hyperparams {
    let mut h = Hyperparams::with_scale(DMatrix::identity(dim, dim));
    // four finite moments of the atom variances keep the SE of the second
    // moment well defined
    h.nu1 = 6.0;
    h
}

/// Forward moments `(E x, E x^2)` of `Beta(a, b)` with independent Gamma
/// hyperpriors on both shapes, Rao-Blackwellised over the fraction.
fn forward_stick_moments(h: &Hyperparams, nested_bottom: bool, seed: u64) -> [(f64, f64); 2] {
    let (pa, pb) = if nested_bottom { (h.a2, h.b2) } else { (h.a1, h.b1) };
    let mut rng = seeded(seed);
    let mut m = [[0.0; 2]; 2];
    for _ in 0..FORWARD {
        let a = dist::gamma(&mut rng, pa.shape, pa.rate);
        let b = dist::gamma(&mut rng, pb.shape, pb.rate);
        let m1 = a / (a + b);
        let m2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
        m[0][0] += m1;
        m[0][1] += m1 * m1;
        m[1][0] += m2;
        m[1][1] += m2 * m2;
    }
    let n = FORWARD as f64;
    let mut out = [(0.0, 0.0); 2];
    for k in 0..2 {
        let mean = m[k][0] / n;
        let var = m[k][1] / n - mean * mean;
        out[k] = (mean, (var / n).sqrt());
    }
    out
}

struct Check {
    name: String,
    z: f64,
    ess: f64,
}

fn compare(name: &str, trace: &[f64], want: (f64, f64)) -> [Check; 1] {
    let s: TraceSummary = batch_means(trace, BATCHES).unwrap();
    let z = (s.mean - want.0) / (s.se * s.se + want.1 * want.1).sqrt();
    [Check { name: name.to_string(), z, ess: s.ess }]
}

fn moments(name: &str, trace: &[f64], first: (f64, f64), second: (f64, f64)) -> Vec<Check> {
    let sq: Vec<f64> = trace.iter().map(|x| x * x).collect();
    let mut out = Vec::new();
    out.extend(compare(&format!("E[{name}]"), trace, first));
    out.extend(compare(&format!("E[{name}^2]"), &sq, second));
    out
}

fn assert_checks(checks: &[Check]) {
    for c in checks {
        println!("{:<12} z = {:+.2}  ess = {:.0}", c.name, c.z, c.ess);
    }
    for c in checks {
        assert!(c.z.abs() <= 3.0, "{} departs from the prior: z = {}", c.name, c.z);
        assert!(c.ess >= 5000.0, "{} has only {} effective draws", c.name, c.ess);
    }
}

fn beta_moments(a: f64, b: f64) -> ((f64, f64), (f64, f64)) {
    ((a / (a + b), 0.0), (a * (a + 1.0) / ((a + b) * (a + b + 1.0)), 0.0))
}

#[test]
fn mean_sampler_prior_chain() {
    let (data, basis) = dataset();
    let h = hyper(basis.dim());
    let mut sampler = MeanSampler::new(&data, &basis, h.clone(), 4, Pins::default()).unwrap();
    let mut state = sampler.init_state(11).unwrap();
    state.adapting = false;
    let (mut gamma, mut sigma2, mut u1) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..SWEEPS + BURN {
        sampler.simulate_responses(&mut state);
        sampler.sweep(&mut state).unwrap();
        if s >= BURN {
            gamma.push(state.gamma);
            sigma2.push(state.atoms[0].sigma2);
            u1.push(state.sticks.fractions()[0]);
        }
    }
    let (g1, g2) = beta_moments(h.eta1, h.eta2);
    let s1 = (h.nu2 / (h.nu1 - 1.0), 0.0);
    let s2 = (h.nu2 * h.nu2 / ((h.nu1 - 1.0) * (h.nu1 - 2.0)), 0.0);
    let mut hs = h.clone();
    hs.a1 = h.a;
    hs.b1 = h.b;
    let [u_1, u_2] = forward_stick_moments(&hs, false, 5);
    let mut checks = moments("gamma", &gamma, g1, g2);
    checks.extend(moments("sigma2", &sigma2, s1, s2));
    checks.extend(moments("u1", &u1, u_1, u_2));
    assert_checks(&checks);
}

#[test]
fn nested_sampler_prior_chain() {
    let (data, basis) = dataset();
    let h = hyper(basis.dim());
    let mut sampler = NestedSampler::new(&data, &basis, h.clone(), 3, 3, Pins::default()).unwrap();
    let mut state = sampler.init_state(12).unwrap();
    state.adapting = false;
    let (mut gamma, mut nu2, mut v1, mut u11) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..SWEEPS + BURN {
        sampler.simulate_responses(&mut state);
        sampler.sweep(&mut state).unwrap();
        if s >= BURN {
            gamma.push(state.gamma);
            nu2.push(state.nu2);
            v1.push(state.top.fractions()[0]);
            u11.push(state.bottom[0].fractions()[0]);
        }
    }
    let (g1, g2) = beta_moments(h.eta1, h.eta2);
    let n1 = (h.rho / h.psi, 0.0);
    let n2 = (h.rho * (h.rho + 1.0) / (h.psi * h.psi), 0.0);
    let [v_1, v_2] = forward_stick_moments(&h, false, 6);
    let [u_1, u_2] = forward_stick_moments(&h, true, 7);
    let mut checks = moments("gamma", &gamma, g1, g2);
    checks.extend(moments("nu2", &nu2, n1, n2));
    checks.extend(moments("v1", &v1, v_1, v_2));
    checks.extend(moments("u11", &u11, u_1, u_2));
    assert_checks(&checks);
}
