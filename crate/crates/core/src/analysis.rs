//! Posterior summaries, convergence diagnostics, partition scoring and the
//! kernel-smoothing + complete-linkage baseline.

use nalgebra::{DMatrix, DVector};

use crate::archive::Draw;
use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::gdp::Partition;
use crate::model::NestedDataset;

/// Posterior co-clustering probabilities; symmetric with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(DMatrix<f64>);

impl IncidenceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &IncidenceMatrix) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Dimension("incidence matrices differ in size".into()));
        }
        Ok((&self.0 - &other.0).abs().max())
    }
}

pub fn incidence_matrix(draws: &[Partition]) -> Result<IncidenceMatrix> {
    let first = draws.first().ok_or_else(|| Error::invalid("need at least one partition draw"))?;
    let n = first.len();
    if draws.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension("partition draws have inconsistent item counts".into()));
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for p in draws {
        let lab = p.labels();
        for i in 0..n {
            for j in (i + 1)..n {
                if lab[i] == lab[j] {
                    m[(i, j)] += 1.0;
                }
            }
        }
    }
    let t = draws.len() as f64;
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = m[(i, j)] / t;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(IncidenceMatrix(m))
}

/// `sum_{i<j} (1[c_i = c_j] - p_ij)^2`.
pub fn binder_loss(p: &Partition, incidence: &IncidenceMatrix) -> f64 {
    let lab = p.labels();
    let mut loss = 0.0;
    for i in 0..lab.len() {
        for j in (i + 1)..lab.len() {
            let same = if lab[i] == lab[j] { 1.0 } else { 0.0 };
            let e = same - incidence.get(i, j);
            loss += e * e;
        }
    }
    loss
}

/// The candidate with the smallest Binder loss (first one on ties), and its
/// index.
pub fn point_partition(draws: &[Partition], incidence: &IncidenceMatrix) -> Result<(Partition, usize)> {
    if draws.is_empty() {
        return Err(Error::invalid("need at least one partition draw"));
    }
    if draws.iter().any(|p| p.len() != incidence.len()) {
        return Err(Error::Dimension("partition and incidence sizes differ".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (idx, p) in draws.iter().enumerate() {
        let l = binder_loss(p, incidence);
        if l < best.0 {
            best = (l, idx);
        }
    }
    Ok((draws[best.1].clone(), best.1))
}

/// Gelman-Rubin potential scale reduction factor
/// `sqrt((n-1)/n + B/(n W))`.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::invalid("PSRF needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("PSRF needs equal-length chains of at least two draws"));
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf / (m as f64 - 1.0) * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::Undefined("within-chain variance is zero".into()));
    }
    Ok(((nf - 1.0) / nf + b / (nf * w)).sqrt())
}

/// Pointwise posterior mean and central 95% band of a reconstructed curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Nearest-rank percentile of sorted values: element `ceil(p n)` (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Reconstruct the curve generating replicate `replicate` of `subject`
/// across draws: the mean model uses the subject's atom (the replicate index
/// is ignored), the nested model the replicate's own atom.
pub fn reconstruct_curves(
    draws: &[Draw],
    basis: &SplineBasis,
    subject: usize,
    replicate: usize,
    grid: &[f64],
) -> Result<CurveBand> {
    if draws.is_empty() {
        return Err(Error::invalid("no retained draws"));
    }
    let design = basis.design_matrix(grid);
    let mut values = vec![Vec::with_capacity(draws.len()); grid.len()];
    for d in draws {
        let atom = d.curve_atom(subject, replicate).ok_or_else(|| {
            Error::Archive(format!("draw {} has no atom for subject {subject} replicate {replicate}", d.iteration))
        })?;
        if atom.theta.len() != basis.dim() {
            return Err(Error::Dimension("archived atoms do not match the basis".into()));
        }
        let beta = nalgebra::DVector::from_vec(atom.effective());
        let curve = design.matrix() * beta;
        for (g, v) in curve.iter().enumerate() {
            values[g].push(*v);
        }
    }
    let n = draws.len() as f64;
    let mut band = CurveBand { grid: grid.to_vec(), mean: vec![], lo: vec![], hi: vec![] };
    for mut v in values {
        let mean = v.iter().sum::<f64>() / n;
        v.sort_by(f64::total_cmp);
        band.lo.push(nearest_rank(&v, 0.025).min(mean));
        band.hi.push(nearest_rank(&v, 0.975).max(mean));
        band.mean.push(mean);
    }
    Ok(band)
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand(p: &Partition, q: &Partition) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("partitions have {} and {} items", p.len(), q.len())));
    }
    let (rp, rq) = (p.num_clusters(), q.num_clusters());
    let mut table = vec![vec![0usize; rq]; rp];
    for (a, b) in p.labels().iter().zip(q.labels()) {
        table[*a][*b] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sa: f64 = p.block_sizes().into_iter().map(choose2).sum();
    let sb: f64 = q.block_sizes().into_iter().map(choose2).sum();
    let total = choose2(p.len());
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        // only reachable when both partitions are trivial in the same way
        return Ok(if p == q { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Output of the smoothing + hierarchical-clustering comparator.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub partition: Partition,
    /// Complete-linkage merge heights in merge order.
    pub merge_heights: Vec<f64>,
    /// `(k, BIC)` for each candidate cut.
    pub bic: Vec<(usize, f64)>,
}

/// Nadaraya-Watson smoother with a Gaussian kernel.
pub fn kernel_smooth(x: &[f64], y: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|g| {
            let logw: Vec<f64> = x.iter().map(|xi| -0.5 * ((g - xi) / bandwidth).powi(2)).collect();
            let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for (lw, yi) in logw.iter().zip(y) {
                let w = (lw - mx).exp();
                num += w * yi;
                den += w;
            }
            num / den
        })
        .collect()
}

/// Silverman's rule `1.06 sd n^{-1/5}`, floored at `floor`.
pub fn silverman_bandwidth(x: &[f64], floor: f64) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return floor;
    }
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    (1.06 * sd * n.powf(-0.2)).max(floor)
}

/// Complete-linkage agglomeration. Returns the merge heights and, for every
/// number of clusters `k = 1..=n`, the corresponding labels.
fn complete_linkage(points: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<usize>>) {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = dist(&points[i], &points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut heights = Vec::with_capacity(n.saturating_sub(1));
    let mut cuts = vec![Vec::new(); n + 1];
    let labels_of = |members: &[Option<Vec<usize>>]| {
        let mut lab = vec![0; n];
        for (c, m) in members.iter().flatten().enumerate() {
            for &i in m {
                lab[i] = c;
            }
        }
        lab
    };
    cuts[n] = labels_of(&members);
    for k in (1..n).rev() {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..n {
            if members[a].is_none() {
                continue;
            }
            for b in (a + 1)..n {
                if members[b].is_some() && d[a][b] < best.0 {
                    best = (d[a][b], a, b);
                }
            }
        }
        let (h, a, b) = best;
        heights.push(h);
        let mb = members[b].take().expect("active cluster");
        members[a].as_mut().expect("active cluster").extend(mb);
        for c in 0..n {
            if c != a && members[c].is_some() {
                let v = d[a][c].max(d[b][c]);
                d[a][c] = v;
                d[c][a] = v;
            }
        }
        cuts[k] = labels_of(&members);
    }
    (heights, cuts)
}

/// Shrinkage of the baseline noise covariance towards its diagonal.
const BASELINE_SHRINK: f64 = 0.05;

/// Smooth each curve onto `grid_points` equally spaced points, average per
/// subject, cluster the averages by complete linkage and cut the dendrogram
/// at the number of clusters maximising a BIC. The BIC is evaluated in
/// coordinates whitened by the pooled covariance of replicate profiles around
/// their subject average, where smoothing noise is spherical. Each cluster is
/// a spherical Gaussian with its own mean and variance, floored at the
/// variance of a subject average. The sample size in the penalty is the
/// number of gridded values. Cuts range over `1..=I`.
pub fn baseline_cluster(data: &NestedDataset, grid_points: usize) -> Result<BaselineResult> {
    let n = data.num_subjects();
    if n < 2 {
        return Err(Error::invalid("baseline clustering needs at least two subjects"));
    }
    if grid_points < 2 {
        return Err(Error::invalid("baseline grid needs at least two points"));
    }
    let (lo, hi) = data.x_range();
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|g| lo + step * g as f64).collect();
    let floor = if step > 0.0 { step } else { 1.0 };
    let mut noise_cov = DMatrix::<f64>::zeros(grid_points, grid_points);
    let mut noise_dof = 0.0;
    let mut inv_reps = 0.0;
    let profiles: Vec<Vec<f64>> = data
        .subjects()
        .iter()
        .map(|s| {
            let curves: Vec<Vec<f64>> = s
                .replicates
                .iter()
                .map(|r| kernel_smooth(&r.x, &r.y, silverman_bandwidth(&r.x, floor), &grid))
                .collect();
            let m = curves.len() as f64;
            let mean: Vec<f64> = (0..grid_points).map(|g| curves.iter().map(|c| c[g]).sum::<f64>() / m).collect();
            for c in &curves {
                let e = DVector::from_iterator(grid_points, c.iter().zip(&mean).map(|(a, b)| a - b));
                noise_cov += &e * e.transpose();
            }
            noise_dof += m - 1.0;
            inv_reps += 1.0 / m;
            mean
        })
        .collect();

    let (heights, cuts) = complete_linkage(&profiles);
    let dim = grid_points as f64;
    let nf = n as f64;
    let grand: Vec<f64> = (0..grid_points).map(|g| profiles.iter().map(|p| p[g]).sum::<f64>() / nf).collect();
    let total_ss: f64 = profiles.iter().flat_map(|p| p.iter().zip(&grand).map(|(a, b)| (a - b) * (a - b))).sum();
    if profiles.iter().all(|p| p == &profiles[0]) || !(total_ss > 0.0) {
        return Ok(BaselineResult { partition: Partition::from_labels(&vec![0; n]), merge_heights: heights, bic: vec![] });
    }
    // Noise covariance shrunk towards its diagonal and bounded below so that
    // whitening stays well conditioned; without replicates it is isotropic.
    let tiny = 1e-12 * total_ss / (nf * dim);
    let (profiles, var_floor) = if noise_dof > 0.0 && noise_cov.trace() > 0.0 {
        let mut cov = noise_cov / noise_dof;
        let diag = DMatrix::from_diagonal(&cov.diagonal());
        cov = cov * (1.0 - BASELINE_SHRINK) + diag * BASELINE_SHRINK;
        let ridge = (cov.trace() / dim * 1e-6).max(tiny);
        for g in 0..grid_points {
            cov[(g, g)] += ridge;
        }
        let chol = cov.cholesky().ok_or_else(|| Error::NotPositiveDefinite("baseline noise covariance".into()))?;
        let white = profiles
            .iter()
            .map(|p| {
                let z = chol.l().solve_lower_triangular(&DVector::from_column_slice(p)).expect("nonsingular factor");
                z.iter().copied().collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>();
        (white, inv_reps / nf)
    } else {
        (profiles, tiny)
    };
    let mut bic = Vec::new();
    for (k, labels) in cuts.iter().enumerate().skip(1) {
        let mut sums = vec![vec![0.0; grid_points]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in profiles.iter().zip(labels) {
            sizes[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut rss = vec![0.0; k];
        for (p, &c) in profiles.iter().zip(labels) {
            for (g, v) in p.iter().enumerate() {
                let mu = sums[c][g] / sizes[c] as f64;
                rss[c] += (v - mu) * (v - mu);
            }
        }
        let loglik: f64 = (0..k)
            .map(|c| {
                let m = sizes[c] as f64 * dim;
                let s2 = (rss[c] / m).max(var_floor);
                -0.5 * m * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * rss[c] / s2
            })
            .sum();
        let params = k as f64 * (dim + 1.0);
        bic.push((k, 2.0 * loglik - params * (nf * dim).ln()));
    }
    let best_k = bic.iter().fold((0, f64::NEG_INFINITY), |acc, &(k, b)| if b > acc.1 { (k, b) } else { acc }).0;
    Ok(BaselineResult { partition: Partition::from_labels(&cuts[best_k]), merge_heights: heights, bic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::AtomRecord;
    use crate::dist::seeded;
    use crate::model::{Replicate, Subject};
    use proptest::prelude::*;
    use rand::Rng;

    fn p(l: &[usize]) -> Partition {
        Partition::from_labels(l)
    }

    #[test]
    fn incidence_of_two_draws() {
        let m = incidence_matrix(&[p(&[0, 0, 1]), p(&[0, 1, 1])]).unwrap();
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.get(1, 2), 0.5);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(2, 2), 1.0);
        assert!(incidence_matrix(&[p(&[0, 0]), p(&[0])]).is_err());
        assert!(incidence_matrix(&[]).is_err());
    }

    #[test]
    fn incidence_matches_pair_counting() {
        let mut rng = seeded(4);
        let draws: Vec<Partition> =
            (0..50).map(|_| p(&(0..7).map(|_| rng.random_range(0..3)).collect::<Vec<_>>())).collect();
        let m = incidence_matrix(&draws).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let c = draws.iter().filter(|d| d.same_block(i, j)).count() as f64 / 50.0;
                assert_eq!(m.get(i, j), c);
            }
        }
    }

    #[test]
    fn point_partition_simple_cases() {
        let block = p(&[0, 0, 1, 1]);
        let m = incidence_matrix(&[block.clone()]).unwrap();
        let cands = [p(&[0, 0, 0, 0]), block.clone(), p(&[0, 1, 2, 3])];
        assert_eq!(point_partition(&cands, &m).unwrap().0, block);
        let ident = incidence_matrix(&[p(&[0, 1, 2, 3])]).unwrap();
        assert_eq!(point_partition(&cands, &ident).unwrap().0, p(&[0, 1, 2, 3]));
    }

    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        // restricted growth strings
        let mut out = vec![vec![0]];
        for _ in 1..n {
            let mut next = Vec::new();
            for s in &out {
                let m = s.iter().max().unwrap() + 1;
                for l in 0..=m {
                    let mut t = s.clone();
                    t.push(l);
                    next.push(t);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn point_partition_matches_exhaustive_search() {
        let all: Vec<Partition> = all_partitions(4).iter().map(|l| p(l)).collect();
        assert_eq!(all.len(), 15);
        let mut rng = seeded(8);
        for _ in 0..20 {
            let mut m = DMatrix::identity(4, 4);
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let v: f64 = rng.random();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let inc = IncidenceMatrix(m);
            let (best, _) = point_partition(&all, &inc).unwrap();
            let min = all.iter().map(|q| binder_loss(q, &inc)).fold(f64::INFINITY, f64::min);
            assert_eq!(binder_loss(&best, &inc), min);
        }
    }

    #[test]
    fn psrf_cases() {
        let c: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let r = psrf(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert!((r - (99.0f64 / 100.0).sqrt()).abs() < 1e-12);
        assert!(matches!(psrf(&[vec![1.0; 5], vec![2.0; 5]]), Err(Error::Undefined(_))));
        assert!(psrf(&[c.clone()]).is_err());
        let shifted: Vec<f64> = c.iter().map(|v| v + 50.0).collect();
        assert!(psrf(&[c, shifted]).unwrap() > 1.2);
    }

    #[test]
    fn psrf_near_one_for_exchangeable_chains() {
        let mut rng = seeded(2);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..20_000).map(|_| rng.random::<f64>()).collect()).collect();
        assert!((psrf(&chains).unwrap() - 1.0).abs() < 0.01);
    }

    fn draw_with(theta: Vec<f64>) -> Draw {
        let d = theta.len();
        Draw {
            iteration: 1,
            log_posterior: 0.0,
            z: vec![0],
            c: vec![],
            atoms: vec![AtomRecord { top: 0, bottom: 0, theta, sigma2: 1.0, lambda: vec![true; d] }],
            concentrations: vec![1.0, 1.0],
            gamma: 0.5,
            nu2: 0.04,
            omega_norm: 1.0,
            sigma_norm: Some(1.0),
        }
    }

    #[test]
    fn reconstruction_bands() {
        let basis = SplineBasis::new(vec![0.0], 1).unwrap();
        let grid = [-1.0, 0.0, 1.0, 3.0];
        let one = reconstruct_curves(&[draw_with(vec![1.0, 2.0])], &basis, 0, 0, &grid).unwrap();
        assert_eq!(one.lo, one.hi);
        assert_eq!(one.mean, vec![1.0, 1.0, 3.0, 7.0]);
        let zero = reconstruct_curves(&[draw_with(vec![0.0, 0.0])], &basis, 0, 0, &grid).unwrap();
        assert!(zero.mean.iter().all(|v| *v == 0.0));
        let two = reconstruct_curves(&[draw_with(vec![1.0, 2.0]), draw_with(vec![0.0, -1.0])], &basis, 0, 0, &grid).unwrap();
        for g in 0..grid.len() {
            assert_eq!(two.lo[g], one.mean[g].min(zero.mean[g] - grid[g].max(0.0)));
            assert_eq!(two.hi[g], one.mean[g].max(zero.mean[g] - grid[g].max(0.0)));
        }
    }

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand(&p(&[0, 0, 1, 1]), &p(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(adjusted_rand(&p(&[0, 1, 2, 3]), &p(&[0, 0, 0, 0])).unwrap(), 0.0);
        assert!(adjusted_rand(&p(&[0]), &p(&[0, 0])).is_err());
        // hand-computed contingency table: rows (2,1), cols (1,2); n_ij = [[1,1],[0,1]]
        // index 0, sa 1, sb 1, total 3 -> (0 - 1/3) / (1 - 1/3) = -0.5
        assert!((adjusted_rand(&p(&[0, 0, 1]), &p(&[0, 1, 1])).unwrap() + 0.5).abs() < 1e-15);
    }

    fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
        // pair-counting form
        let n = a.len();
        let (mut n11, mut n10, mut n01, mut n00) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => n11 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                    (false, false) => n00 += 1.0,
                }
            }
        }
        2.0 * (n00 * n11 - n01 * n10) / ((n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11))
    }

    proptest! {
        #[test]
        fn ari_symmetric_and_matches_pair_counts(a in proptest::collection::vec(0usize..4, 6..12), seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
            let (pa, pb) = (p(&a), p(&b));
            let x = adjusted_rand(&pa, &pb).unwrap();
            prop_assert!((x - adjusted_rand(&pb, &pa).unwrap()).abs() < 1e-12);
            let oracle = ari_oracle(&a, &b);
            if oracle.is_finite() {
                prop_assert!((x - oracle).abs() < 1e-9);
            }
            prop_assert_eq!(x == 1.0, pa == pb);
        }

        #[test]
        fn incidence_invariant_to_relabeling(labels in proptest::collection::vec(proptest::collection::vec(0usize..4, 8), 1..6)) {
            let draws: Vec<Partition> = labels.iter().map(|l| p(l)).collect();
            let relabeled: Vec<Partition> = labels.iter().map(|l| p(&l.iter().map(|v| 3 - v).collect::<Vec<_>>())).collect();
            let m = incidence_matrix(&draws).unwrap();
            prop_assert_eq!(&m, &incidence_matrix(&relabeled).unwrap());
            for i in 0..8 {
                prop_assert_eq!(m.get(i, i), 1.0);
                for j in 0..8 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
            let (best, _) = point_partition(&draws, &m).unwrap();
            let lb = binder_loss(&best, &m);
            for d in &draws {
                prop_assert!(lb <= binder_loss(d, &m));
            }
        }
    }

    fn subject(id: &str, level: f64, noise: f64, rng: &mut crate::dist::ChainRng) -> Subject {
        let x: Vec<f64> = (0..13).map(|t| t as f64 - 10.0).collect();
        let replicates = (0..3)
            .map(|j| Replicate {
                id: format!("r{j}"),
                x: x.clone(),
                y: x.iter().map(|_| level + noise * (rng.random::<f64>() - 0.5)).collect(),
            })
            .collect();
        Subject { id: id.into(), replicates }
    }

    #[test]
    fn baseline_separates_distant_groups() {
        for seed in 0..5 {
            let mut rng = seeded(seed);
            let subjects: Vec<Subject> =
                (0..20).map(|i| subject(&format!("s{i}"), if i < 10 { 0.0 } else { 5.0 }, 0.01, &mut rng)).collect();
            let data = NestedDataset::new(subjects).unwrap();
            let res = baseline_cluster(&data, 6).unwrap();
            let truth: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
            assert_eq!(res.partition, p(&truth), "seed {seed}");
            assert_eq!(res.merge_heights.len(), 19);
            assert!(res.merge_heights.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(res.bic.len(), 20);
        }
    }

    #[test]
    fn baseline_grid_changes_are_accepted() {
        let mut rng = seeded(9);
        let subjects: Vec<Subject> =
            (0..12).map(|i| subject(&format!("s{i}"), (i % 3) as f64 * 0.02, 0.1, &mut rng)).collect();
        let data = NestedDataset::new(subjects).unwrap();
        for grid in [6, 11] {
            let res = baseline_cluster(&data, grid).unwrap();
            assert_eq!(res.partition.len(), 12);
        }
    }

    #[test]
    fn baseline_identical_subjects_form_one_cluster() {
        let mut rng = seeded(1);
        let s = subject("a", 1.0, 0.3, &mut rng);
        let subjects: Vec<Subject> = (0..5).map(|i| Subject { id: format!("s{i}"), ..s.clone() }).collect();
        let data = NestedDataset::new(subjects).unwrap();
        assert_eq!(baseline_cluster(&data, 11).unwrap().partition.num_clusters(), 1);
    }

    #[test]
    fn smoother_reproduces_constants() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [2.5; 4];
        for v in kernel_smooth(&x, &y, 0.3, &[-5.0, 0.5, 10.0]) {
            assert!((v - 2.5).abs() < 1e-12);
        }
        assert_eq!(silverman_bandwidth(&[1.0], 0.7), 0.7);
        assert!(silverman_bandwidth(&x, 0.01) > 0.5);
    }
}
