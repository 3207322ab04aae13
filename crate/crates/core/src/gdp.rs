//! Stick-breaking machinery for the generalized Dirichlet process (GDP):
//! weights, truncated and lazy sampling, closed-form cluster-growth
//! quantities and truncation error bounds.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::dist::{self, derive_seed, seeded};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdpParams {
    pub a: f64,
    pub b: f64,
}

impl GdpParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::invalid(format!("GDP shapes must be positive and finite, got a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }

    /// Prior mean of a stick fraction.
    pub fn mean_fraction(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// Stick fractions `u` (last one pinned to 1) and the weights they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct StickWeights {
    u: Vec<f64>,
    w: Vec<f64>,
}

impl StickWeights {
    pub fn from_fractions(u: Vec<f64>) -> Result<Self> {
        match u.last() {
            None => return Err(Error::invalid("stick fractions must be non-empty")),
            Some(&last) if last != 1.0 => {
                return Err(Error::invalid(format!("final stick fraction must be 1, got {last}")))
            }
            _ => {}
        }
        if let Some(bad) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("stick fraction {bad} outside [0, 1]")));
        }
        let mut w = Vec::with_capacity(u.len());
        let mut rem = 1.0;
        for &frac in &u {
            w.push(frac * rem);
            rem *= 1.0 - frac;
        }
        Ok(Self { u, w })
    }

    /// Truncated draw: `u_k ~ Beta(a, b)` for `k < K`, `u_K = 1`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, params: GdpParams, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("truncation level must be at least 1"));
        }
        let mut u: Vec<f64> = (0..k - 1).map(|_| dist::beta(rng, params.a, params.b)).collect();
        u.push(1.0);
        Self::from_fractions(u)
    }

    /// Conjugate update given component occupancy counts:
    /// `u_k ~ Beta(a + n_k, b + sum_{l>k} n_l)`.
    pub fn sample_posterior<R: Rng + ?Sized>(rng: &mut R, params: GdpParams, counts: &[usize]) -> Result<Self> {
        let k = counts.len();
        if k == 0 {
            return Err(Error::invalid("truncation level must be at least 1"));
        }
        let mut tail: usize = counts.iter().sum();
        let mut u = Vec::with_capacity(k);
        for &n_k in &counts[..k - 1] {
            tail -= n_k;
            u.push(dist::beta(rng, params.a + n_k as f64, params.b + tail as f64));
        }
        u.push(1.0);
        Self::from_fractions(u)
    }

    pub fn fractions(&self) -> &[f64] {
        &self.u
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `ln w_k`, computed from the fractions so tiny weights keep precision.
    pub fn log_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.u.len());
        let mut log_rem = 0.0;
        for &frac in &self.u {
            out.push(frac.ln() + log_rem);
            log_rem += (-frac).ln_1p();
        }
        out
    }

    /// Sum over the free fractions of `ln Beta(u_k | a, b)`.
    pub fn log_prior(&self, params: GdpParams) -> f64 {
        self.u[..self.u.len() - 1]
            .iter()
            .map(|&frac| dist::ln_beta_pdf(frac, params.a, params.b))
            .sum()
    }
}

/// A partition of `n` items in canonical form: labels are numbered by order
/// of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l.clone()).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionStats {
    pub num_clusters: usize,
    pub largest_block: usize,
    pub mean_block_size: f64,
}

pub fn partition_stats(p: &Partition) -> Result<PartitionStats> {
    if p.is_empty() {
        return Err(Error::invalid("partition has no items"));
    }
    let sizes = p.block_sizes();
    Ok(PartitionStats {
        num_clusters: sizes.len(),
        largest_block: sizes.iter().copied().max().unwrap_or(0),
        mean_block_size: p.len() as f64 / sizes.len() as f64,
    })
}

/// `ln(1 - e^x)` for `x < 0`.
fn log1mexp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Probability that the `i`-th draw opens a new cluster, in closed form:
///
/// `i a Γ(a+b) Γ(b+i-1) / (Γ(b) Γ(a+b+i) - Γ(a+b) Γ(b+i))`,
///
/// evaluated in log-Gamma space. The formula is exact for `a = 1` (the
/// Dirichlet process) and for `i <= 2`; for other shapes it departs from the
/// stick-breaking process simulated by [`simulate_partition`].
pub fn expected_new_cluster_prob(params: GdpParams, i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::invalid("draw index starts at 1"));
    }
    if i == 1 {
        // the closed form reduces to a / a
        return Ok(1.0);
    }
    let GdpParams { a, b } = params;
    let i_f = i as f64;
    let lg_ab = ln_gamma(a + b);
    let lg_b = ln_gamma(b);
    let lg_abi = ln_gamma(a + b + i_f);
    // ln of Γ(a+b)Γ(b+i) / (Γ(b)Γ(a+b+i)) = ln E[(1-u)^i] < 0
    let ratio = lg_ab + ln_gamma(b + i_f) - lg_b - lg_abi;
    if !ratio.is_finite() || ratio >= 0.0 {
        return Err(Error::Numerical(format!(
            "cluster-growth denominator underflows for a={a}, b={b}, i={i}"
        )));
    }
    let log_num = i_f.ln() + a.ln() + lg_ab + ln_gamma(b + i_f - 1.0);
    let log_den = lg_b + lg_abi + log1mexp(ratio);
    let v = (log_num - log_den).exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-finite growth term for a={a}, b={b}, i={i}")))
    }
}

/// Closed-form expected number of clusters among `n` draws.
pub fn expected_clusters(params: GdpParams, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut total = 0.0;
    let mut comp = 0.0;
    for i in 1..=n {
        // Kahan summation keeps long sums accurate to the last few ulps.
        let y = expected_new_cluster_prob(params, i)? - comp;
        let t = total + y;
        comp = (t - total) - y;
        total = t;
    }
    Ok(total)
}

/// Leading constant of `E(W_n) ~ C(a,b) n^{-a}`: `a Γ(a+b) / Γ(b)`.
pub fn growth_constant(params: GdpParams) -> f64 {
    (params.a.ln() + ln_gamma(params.a + params.b) - ln_gamma(params.b)).exp()
}

/// `(exact E(W_n), C(a,b) n^{-a})`.
pub fn expected_new_cluster_rate(params: GdpParams, n: usize) -> Result<(f64, f64)> {
    let exact = expected_new_cluster_prob(params, n)?;
    let approx = growth_constant(params) * (n as f64).powf(-params.a);
    Ok((exact, approx))
}

/// Most sticks [`simulate_partition`] may generate for one partition.
pub const MAX_STICKS: usize = 1_000_000;

/// Exact prior draw of a partition of `n` items: sticks are generated lazily
/// until the cumulative weight covers each uniform, so no truncation error is
/// introduced. Fails when more than [`MAX_STICKS`] sticks would be needed,
/// which happens when `a` is so small that the fractions underflow.
pub fn simulate_partition<R: Rng + ?Sized>(rng: &mut R, params: GdpParams, n: usize) -> Result<Partition> {
    let mut cum: Vec<f64> = Vec::new();
    let mut rem = 1.0f64;
    let mut stick_of = Vec::with_capacity(n);
    for _ in 0..n {
        let v = rng.random::<f64>();
        while cum.last().is_none_or(|&c| c <= v) {
            if cum.len() == MAX_STICKS {
                return Err(Error::Numerical(format!(
                    "stick weights for a={}, b={} do not cover the unit interval within {MAX_STICKS} sticks",
                    params.a, params.b
                )));
            }
            let frac = dist::beta(rng, params.a, params.b);
            rem *= 1.0 - frac;
            cum.push(1.0 - rem);
        }
        stick_of.push(cum.partition_point(|&c| c <= v));
    }
    Ok(Partition::from_labels(&stick_of))
}

/// Monte Carlo summary of prior partitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureSummary {
    pub reps: usize,
    pub mean_clusters: f64,
    pub se_clusters: f64,
    pub mean_largest: f64,
    pub se_largest: f64,
    pub mean_block_size: f64,
}

/// Simulates `reps` partitions of `n` items in parallel. Replicate `r` uses
/// its own stream derived from `seed`, so results do not depend on the
/// thread count.
pub fn partition_structure(params: GdpParams, n: usize, reps: usize, seed: u64) -> Result<StructureSummary> {
    if n == 0 || reps < 2 {
        return Err(Error::invalid("need n >= 1 and at least two replicates"));
    }
    let stats: Vec<PartitionStats> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded(derive_seed(seed, r as u64));
            partition_stats(&simulate_partition(&mut rng, params, n)?)
        })
        .collect::<Result<_>>()?;
    let (mc, sc) = mean_se(stats.iter().map(|s| s.num_clusters as f64));
    let (ml, sl) = mean_se(stats.iter().map(|s| s.largest_block as f64));
    let (mb, _) = mean_se(stats.iter().map(|s| s.mean_block_size));
    Ok(StructureSummary {
        reps,
        mean_clusters: mc,
        se_clusters: sc,
        mean_largest: ml,
        se_largest: sl,
        mean_block_size: mb,
    })
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Finite(usize),
    Infinite,
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truncation::Finite(k) => write!(f, "{k}"),
            Truncation::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "infinite" => Ok(Truncation::Infinite),
            other => other
                .parse::<usize>()
                .map(Truncation::Finite)
                .map_err(|_| Error::invalid(format!("truncation must be a count or 'inf', got {s:?}"))),
        }
    }
}

/// Shapes of a nested GDP: `(a1, b1)` for the distribution-level sticks,
/// `(a2, b2)` for the atom-level sticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedShapes {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

/// L1 bound between the prior predictive of the truncated nested GDP (`K`
/// distributions, `L` atoms each) and the untruncated one, for `J`
/// distributions with `n` observations each. Zero when both levels are
/// untruncated.
pub fn truncation_bound(shapes: NestedShapes, k: Truncation, l: Truncation, j: usize, n: usize) -> Result<f64> {
    let NestedShapes { a1, b1, a2, b2 } = shapes;
    if [a1, b1, a2, b2].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("nested GDP shapes must be positive and finite"));
    }
    if j == 0 || n == 0 {
        return Err(Error::invalid("J and n must be at least 1"));
    }
    if matches!(k, Truncation::Finite(0)) || matches!(l, Truncation::Finite(0)) {
        return Err(Error::invalid("finite truncation levels must be at least 1"));
    }
    // ln of [1 - (b/(a+b))^(T-1)]^power
    let level = |a: f64, b: f64, t: usize, power: f64| -> f64 {
        let tail = ((t - 1) as f64 * (b / (a + b)).ln()).exp();
        power * (-tail).ln_1p()
    };
    let log_keep = match (k, l) {
        (Truncation::Infinite, Truncation::Infinite) => return Ok(0.0),
        (Truncation::Finite(kk), Truncation::Infinite) => level(a1, b1, kk, j as f64),
        (Truncation::Infinite, Truncation::Finite(ll)) => level(a2, b2, ll, (n * j) as f64),
        (Truncation::Finite(kk), Truncation::Finite(ll)) => {
            level(a1, b1, kk, j as f64) + level(a2, b2, ll, (n * j) as f64)
        }
    };
    Ok(-4.0 * log_keep.exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stick_weights_by_hand() {
        assert_eq!(StickWeights::from_fractions(vec![1.0]).unwrap().weights(), &[1.0]);
        assert_eq!(
            StickWeights::from_fractions(vec![0.5, 0.5, 1.0]).unwrap().weights(),
            &[0.5, 0.25, 0.25]
        );
        let w = StickWeights::from_fractions(vec![0.2, 0.3, 1.0]).unwrap();
        for (got, want) in w.weights().iter().zip([0.2, 0.24, 0.56]) {
            assert!((got - want).abs() < 1e-15);
        }
        let lw = w.log_weights();
        for (l, v) in lw.iter().zip(w.weights()) {
            assert!((l.exp() - v).abs() < 1e-15);
        }
    }

    #[test]
    fn stick_weight_errors() {
        assert!(StickWeights::from_fractions(vec![]).is_err());
        assert!(StickWeights::from_fractions(vec![0.5, 0.9]).is_err());
        assert!(StickWeights::from_fractions(vec![1.5, 1.0]).is_err());
        assert!(StickWeights::from_fractions(vec![-0.1, 1.0]).is_err());
    }

    #[test]
    fn sampled_sticks() {
        let p = GdpParams::new(1.0, 1.0).unwrap();
        let mut rng = seeded(3);
        assert_eq!(StickWeights::sample(&mut rng, p, 1).unwrap().weights(), &[1.0]);
        let s1 = StickWeights::sample(&mut seeded(9), p, 20).unwrap();
        let s2 = StickWeights::sample(&mut seeded(9), p, 20).unwrap();
        assert_eq!(s1, s2);
        let n = 40_000;
        let mean_w1 = (0..n)
            .map(|_| StickWeights::sample(&mut rng, p, 50).unwrap().weights()[0])
            .sum::<f64>()
            / n as f64;
        // E(u) = a / (a + b); sd of Uniform is 1/sqrt(12).
        assert!((mean_w1 - 0.5).abs() < 4.0 * (1.0 / 12f64).sqrt() / (n as f64).sqrt());
        assert!(StickWeights::sample(&mut rng, p, 0).is_err());
    }

    #[test]
    fn weights_normalised() {
        let mut rng = seeded(1);
        for &(a, b) in &[(0.1, 0.1), (1.0, 5.0), (3.0, 0.5), (2.0, 1e-6)] {
            let p = GdpParams::new(a, b).unwrap();
            for k in [1, 2, 7, 40, 300] {
                let s = StickWeights::sample(&mut rng, p, k).unwrap();
                assert_eq!(s.len(), k);
                assert!((s.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(s.weights().iter().all(|w| *w >= 0.0));
            }
        }
    }

    #[test]
    fn posterior_sticks_respect_counts() {
        let p = GdpParams::new(1.0, 1.0).unwrap();
        let mut rng = seeded(4);
        let s = StickWeights::sample_posterior(&mut rng, p, &[0, 5, 0]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.fractions()[2], 1.0);
        assert!(StickWeights::sample_posterior(&mut rng, p, &[]).is_err());
    }

    #[test]
    fn partition_canonical_form_and_stats() {
        let p = Partition::from_labels(&[7, 7, 3, 9, 3]);
        assert_eq!(p.labels(), &[0, 0, 1, 2, 1]);
        assert_eq!(p.block_sizes(), vec![2, 2, 1]);
        let s = partition_stats(&Partition::from_labels(&[0, 0, 0])).unwrap();
        assert_eq!((s.num_clusters, s.largest_block, s.mean_block_size), (1, 3, 3.0));
        let s = partition_stats(&Partition::from_labels(&[0, 1, 2])).unwrap();
        assert_eq!((s.num_clusters, s.largest_block, s.mean_block_size), (3, 1, 1.0));
        let s = partition_stats(&Partition::from_labels(&[0, 0, 1])).unwrap();
        assert_eq!((s.num_clusters, s.largest_block, s.mean_block_size), (2, 2, 1.5));
        assert!(partition_stats(&Partition::from_labels::<usize>(&[])).is_err());
    }

    #[test]
    fn first_draw_always_new() {
        for &(a, b) in &[(0.5, 2.0), (1.0, 1.0), (2.0, 1.0), (3.0, 3.0), (7.0, 0.01)] {
            let p = GdpParams::new(a, b).unwrap();
            assert!((expected_clusters(p, 1).unwrap() - 1.0).abs() < 1e-13);
            assert!((expected_new_cluster_rate(p, 1).unwrap().0 - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn dirichlet_process_reduction() {
        let p = GdpParams::new(1.0, 1.0).unwrap();
        assert!((expected_clusters(p, 3).unwrap() - (1.0 + 0.5 + 1.0 / 3.0)).abs() < 1e-13);
        let (exact, _) = expected_new_cluster_rate(p, 100).unwrap();
        assert!((exact - 0.01).abs() < 1e-14);
    }

    #[test]
    fn bounded_growth_when_a_exceeds_one() {
        let p = GdpParams::new(2.0, 1.0).unwrap();
        let d = expected_clusters(p, 2000).unwrap() - expected_clusters(p, 1000).unwrap();
        assert!(d > 0.0 && d < 0.01, "{d}");
        let mut prev_z = 0.0;
        let mut prev_w = f64::INFINITY;
        for n in 1..=500 {
            let w = expected_new_cluster_prob(p, n).unwrap();
            prev_z += w;
            assert!(w < prev_w);
            assert!(prev_z >= 0.0);
            prev_w = w;
        }
    }

    #[test]
    fn growth_approximation_ratio() {
        let p = GdpParams::new(1.5, 1.0).unwrap();
        let (exact, approx) = expected_new_cluster_rate(p, 10_000).unwrap();
        let r = exact / approx;
        assert!((0.9..=1.1).contains(&r), "{r}");
    }

    #[test]
    fn simulated_partitions() {
        let p = GdpParams::new(1.0, 1.0).unwrap();
        let mut rng = seeded(2);
        assert_eq!(simulate_partition(&mut rng, p, 1).unwrap().num_clusters(), 1);
        let tiny_b = GdpParams::new(1.0, 1e-6).unwrap();
        let ones = (0..200)
            .filter(|_| simulate_partition(&mut rng, tiny_b, 50).unwrap().num_clusters() == 1)
            .count();
        assert!(ones >= 198);
        let a = simulate_partition(&mut seeded(5), p, 100).unwrap();
        let b = simulate_partition(&mut seeded(5), p, 100).unwrap();
        assert_eq!(a, b);
        let vanishing = GdpParams::new(1e-20, 1.0).unwrap();
        assert!(matches!(simulate_partition(&mut rng, vanishing, 3), Err(Error::Numerical(_))));
    }

    #[test]
    fn bounds() {
        let sh = NestedShapes { a1: 0.7, b1: 2.0, a2: 1.3, b2: 0.4 };
        let b = truncation_bound(sh, Truncation::Finite(1), Truncation::Infinite, 5, 3).unwrap();
        assert_eq!(b, 4.0);
        let one = NestedShapes { a1: 1.0, b1: 1.0, a2: 1.0, b2: 1.0 };
        let b = truncation_bound(one, Truncation::Finite(21), Truncation::Infinite, 10, 1).unwrap();
        let want = 4.0 * (1.0 - (1.0 - 0.5f64.powi(20)).powi(10));
        assert!((b - want).abs() < 1e-15);
        assert!((b - 3.8147e-5).abs() < 1e-9);
        assert_eq!(truncation_bound(sh, Truncation::Infinite, Truncation::Infinite, 3, 3).unwrap(), 0.0);
        assert!(truncation_bound(sh, Truncation::Finite(0), Truncation::Infinite, 3, 3).is_err());
        assert!(truncation_bound(sh, Truncation::Finite(3), Truncation::Infinite, 0, 3).is_err());
    }

    #[test]
    fn truncation_parse() {
        assert_eq!("inf".parse::<Truncation>().unwrap(), Truncation::Infinite);
        assert_eq!("40".parse::<Truncation>().unwrap(), Truncation::Finite(40));
        assert!("x".parse::<Truncation>().is_err());
    }
}
