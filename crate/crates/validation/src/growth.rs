//! Prior cluster growth, partition structure and truncation bounds.

use nestclust::gdp::{
    expected_clusters, expected_new_cluster_rate, partition_structure, truncation_bound, GdpParams, NestedShapes,
    Truncation,
};
use nestclust_cli::commands::{structure_table, StructureArgs};

use crate::{timed, Outcome};

/// Stick-breaking probability that draw `i` opens a new cluster, from
/// `sum_j C(i-1, j) (-1)^j E[u^(j+1)] / (1 - E[(1-u)^(j+1)])`. The
/// alternating sum cancels badly, so it is only used for small `i`.
fn stick_breaking_new_cluster_prob(a: f64, b: f64, i: usize) -> f64 {
    let moment = |p: f64, q: f64, m: usize| -> f64 { (0..m).map(|r| (p + r as f64) / (p + q + r as f64)).product() };
    let mut binom = 1.0;
    let mut total = 0.0;
    for j in 0..i {
        if j > 0 {
            binom *= (i - j) as f64 / j as f64;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * binom * moment(a, b, j + 1) / (1.0 - moment(b, a, j + 1));
    }
    total
}

/// Criterion 1: Monte Carlo cluster counts agree with the closed-form
/// expectation within 3 standard errors.
pub fn theorem_one_oracle() -> Outcome {
    let mut o = Outcome::new(1, "closed-form expected cluster count vs simulation");
    let shapes = [(0.5, 2.0), (1.0, 1.0), (2.0, 1.0), (3.0, 3.0)];
    let sizes = [10usize, 50, 200];
    let reps = 20_000;
    let (rows, secs) = timed(|| {
        let mut rows = Vec::new();
        for (g, &(a, b)) in shapes.iter().enumerate() {
            for (h, &n) in sizes.iter().enumerate() {
                let p = GdpParams::new(a, b).unwrap();
                let sim = partition_structure(p, n, reps, 1000 + (3 * g + h) as u64).unwrap();
                let closed = expected_clusters(p, n).unwrap();
                rows.push((a, b, n, sim, closed));
            }
        }
        rows
    });
    let mut worst: f64 = 0.0;
    for (a, b, n, sim, closed) in rows {
        let z = (sim.mean_clusters - closed) / sim.se_clusters;
        worst = worst.max(z.abs());
        let mut line = format!(
            "a={a} b={b} n={n}: simulated {:.4} +- {:.4}, closed form {closed:.4}, z = {z:+.1}",
            sim.mean_clusters, sim.se_clusters
        );
        if n == 10 {
            let exact: f64 = (1..=n).map(|i| stick_breaking_new_cluster_prob(a, b, i)).sum();
            let ze = (sim.mean_clusters - exact) / sim.se_clusters;
            line.push_str(&format!("; exact stick-breaking value {exact:.4} (z = {ze:+.1})"));
        }
        o.check(z.abs() <= 3.0, line);
    }
    o.check(secs < 120.0, format!("runtime {secs:.1} s (limit 120 s)"));
    if !o.pass {
        o.note(
            "the closed form agrees with exact stick breaking only for a = 1 and the first two draws; \
             the simulator matches the exact stick-breaking expectation"
                .into(),
        );
    }
    o.summary = format!("max |z| = {worst:.1}, {reps} replicates per cell, {secs:.1} s");
    o
}

/// Criterion 2: with `a = 1` the closed form is the Dirichlet-process sum.
pub fn dp_reduction() -> Outcome {
    let mut o = Outcome::new(2, "Dirichlet process reduction");
    let mut worst: f64 = 0.0;
    for b in [0.5, 1.0, 5.0] {
        let p = GdpParams::new(1.0, b).unwrap();
        let mut want = 0.0;
        let mut local: f64 = 0.0;
        for n in 1..=1000usize {
            want += b / (b + n as f64 - 1.0);
            let got = expected_clusters(p, n).unwrap();
            local = local.max((got - want).abs() / want);
        }
        worst = worst.max(local);
        o.check(local <= 1e-10, format!("b={b}: max relative error over n <= 1000 is {local:.2e}"));
    }
    o.summary = format!("max relative error {worst:.2e} (limit 1e-10)");
    o
}

/// Criterion 3: for `a > 1` the expected count levels off.
pub fn bounded_growth() -> Outcome {
    let mut o = Outcome::new(3, "bounded growth for a > 1");
    let p = GdpParams::new(2.0, 1.0).unwrap();
    let diff = expected_clusters(p, 2000).unwrap() - expected_clusters(p, 1000).unwrap();
    o.check(diff < 0.02, format!("E(Z_2000) - E(Z_1000) = {diff:.3e} (limit 0.02)"));
    let (exact, approx) = expected_new_cluster_rate(p, 10_000).unwrap();
    let ratio = exact / approx;
    o.check(
        (0.9..=1.1).contains(&ratio),
        format!("E(W_n) / (C n^-a) at n = 10^4: {exact:.6e} / {approx:.6e} = {ratio:.6}"),
    );
    o.summary = format!("difference {diff:.2e}, ratio {ratio:.4}");
    o
}

/// Spearman rank correlation; ties get their average rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &k in &idx[s..=e] {
                r[k] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// Criterion 4: along curves of fixed `a / (a + b)` the largest cluster
/// shrinks as the number of clusters grows.
pub fn partition_structure_curves() -> Outcome {
    let mut o = Outcome::new(4, "largest cluster vs cluster count along fixed a/(a+b)");
    let (tables, secs) = timed(|| {
        [0.25, 0.5, 0.75]
            .map(|f| {
                let args = StructureArgs {
                    mean_fraction: Some(f),
                    total_min: 0.2,
                    total_max: 50.0,
                    points: 10,
                    n: 1000,
                    reps: 20_000,
                    seed: 7,
                };
                (f, structure_table(&args).unwrap())
            })
            .to_vec()
    });
    let mut worst: f64 = -1.0;
    for (f, rows) in tables {
        let clusters: Vec<f64> = rows.iter().map(|r| r.2.mean_clusters).collect();
        let largest: Vec<f64> = rows.iter().map(|r| r.2.mean_largest).collect();
        let rho = spearman(&clusters, &largest);
        worst = worst.max(rho);
        o.check(
            rho < -0.95 && rows.len() >= 8,
            format!(
                "a/(a+b) = {f}: {} points, clusters {:.2}..{:.2}, largest {:.1}..{:.1}, Spearman rho = {rho:.4}",
                rows.len(),
                clusters[0],
                clusters[clusters.len() - 1],
                largest[0],
                largest[largest.len() - 1]
            ),
        );
    }
    o.check(secs < 600.0, format!("runtime {secs:.1} s (limit 600 s)"));
    o.summary = format!("largest Spearman rho {worst:.4} (limit -0.95), {secs:.1} s");
    o
}

/// Criterion 5: truncation bound closed forms and monotonicity.
pub fn truncation_bounds() -> Outcome {
    let mut o = Outcome::new(5, "truncation error bound");
    let inf = Truncation::Infinite;
    for (a1, b1) in [(0.5, 0.5), (1.0, 1.0), (3.0, 0.2)] {
        let s = NestedShapes { a1, b1, a2: 1.0, b2: 1.0 };
        let v = truncation_bound(s, Truncation::Finite(1), inf, 7, 3).unwrap();
        o.check(v == 4.0, format!("K=1, L=inf, a1={a1}, b1={b1}: {v}"));
    }
    let s = NestedShapes { a1: 1.0, b1: 1.0, a2: 1.0, b2: 1.0 };
    let v = truncation_bound(s, Truncation::Finite(21), inf, 10, 1).unwrap();
    o.check((v - 3.8147e-5).abs() <= 1e-9, format!("a1=b1=1, K=21, J=10, L=inf: {v:.6e} (target 3.8147e-5 +- 1e-9)"));

    let grid = |k: usize, l: usize| truncation_bound(s, Truncation::Finite(k), Truncation::Finite(l), 10, 5).unwrap();
    let (mut k_ok, mut l_ok, mut edge_ok) = (true, true, true);
    for k in 1..=10 {
        for l in 1..=10 {
            let here = grid(k, l);
            if k == 1 || l == 1 {
                // a single component at either level leaves no coverage
                edge_ok &= here == 4.0;
                continue;
            }
            // Strict wherever the gap to 4 is resolvable. Near 4 the change
            // between neighbouring cells is below one ulp, so only require
            // that the bound does not grow there.
            let decreases = |next: f64| if 4.0 - here > 1e-12 { next < here } else { next <= here };
            if k < 10 {
                k_ok &= decreases(grid(k + 1, l));
            }
            if l < 10 {
                l_ok &= decreases(grid(k, l + 1));
            }
        }
    }
    let saturated = (2..=10).flat_map(|k| (2..=10).map(move |l| (k, l))).filter(|&(k, l)| 4.0 - grid(k, l) <= 1e-12).count();
    o.note(format!("{saturated} of 81 cells with K, L >= 2 lie within 1e-12 of 4"));
    o.check(k_ok, "decreasing in K on the 10x10 grid (a=b=1, J=10, n=5)".into());
    o.check(l_ok, "decreasing in L on the same grid".into());
    o.check(edge_ok, "equal to 4 whenever K = 1 or L = 1".into());
    o.summary = format!("K=21 case {v:.6e}");
    o
}
