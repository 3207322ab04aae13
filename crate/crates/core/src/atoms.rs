//! Conjugate update of one mixture atom `(lambda, theta, sigma2)` under the
//! baseline measure `N(theta | 0, sigma2 Omega) x IG(sigma2 | nu1, nu2) x
//! prod_s Ber(lambda_s | gamma)`.
//!
//! Observations allocated to the atom enter only through sufficient
//! statistics of `y ~ N(B Lambda theta, sigma2 C)` with known `C`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::dist::{self, inv_gamma, mvn_from_precision};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det, Chol};
use crate::model::ClusterAtom;

/// `G = sum B'C^{-1}B`, `h = sum B'C^{-1}y`, `s = sum y'C^{-1}y`, together
/// with the observation count and `sum ln|C|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n_obs: usize,
    pub log_det_c: f64,
}

impl SuffStats {
    pub fn zeros(dim: usize) -> Self {
        Self { gram: DMatrix::zeros(dim, dim), xty: DVector::zeros(dim), yty: 0.0, n_obs: 0, log_det_c: 0.0 }
    }

    /// Statistics of one curve with identity noise correlation.
    pub fn from_curve(b: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: b.transpose() * b,
            xty: b.transpose() * y,
            yty: y.dot(y),
            n_obs: y.len(),
            log_det_c: 0.0,
        }
    }

    /// Statistics of one curve with noise correlation `C = L L'`.
    pub fn whitened(b: &DMatrix<f64>, y: &DVector<f64>, chol_c: &Chol) -> Self {
        let l = chol_c.l();
        let bw = l.solve_lower_triangular(b).expect("positive Cholesky diagonal");
        let yw = l.solve_lower_triangular(y).expect("positive Cholesky diagonal");
        let mut s = Self::from_curve(&bw, &yw);
        s.log_det_c = log_det(chol_c);
        s
    }

    pub fn add(&mut self, other: &SuffStats) {
        self.gram += &other.gram;
        self.xty += &other.xty;
        self.yty += other.yty;
        self.n_obs += other.n_obs;
        self.log_det_c += other.log_det_c;
    }

    /// Gaussian log-likelihood of the summarised data at coefficients `beta`
    /// (already multiplied by `Lambda`) and variance `sigma2`.
    pub fn loglik(&self, beta: &DVector<f64>, sigma2: f64) -> f64 {
        let rss = (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.gram * beta))).max(0.0);
        -0.5 * (self.n_obs as f64 * (2.0 * PI * sigma2).ln() + self.log_det_c + rss / sigma2)
    }
}

/// Baseline-measure quantities fixed during one atom update.
pub struct AtomPrior<'a> {
    pub omega: &'a DMatrix<f64>,
    pub omega_chol: &'a Chol,
    pub omega_inv: &'a DMatrix<f64>,
    pub gamma: f64,
    pub nu1: f64,
    pub nu2: f64,
}

struct Collapsed {
    log_ml: f64,
    chol: Chol,
    h: DVector<f64>,
    rss: f64,
}

fn collapse(stats: &SuffStats, lambda: &[bool], prior: &AtomPrior) -> Result<Collapsed> {
    let d = lambda.len();
    let mut p = prior.omega_inv.clone();
    let mut h = DVector::zeros(d);
    for r in 0..d {
        if !lambda[r] {
            continue;
        }
        h[r] = stats.xty[r];
        for c in 0..d {
            if lambda[c] {
                p[(r, c)] += stats.gram[(r, c)];
            }
        }
    }
    let chol = cholesky(&p, "atom posterior precision")?;
    let q = h.dot(&chol.solve(&h));
    let rss = (stats.yty - q).max(0.0);
    let log_ml = -0.5 * log_det(&chol) - (prior.nu1 + 0.5 * stats.n_obs as f64) * (prior.nu2 + 0.5 * rss).ln();
    Ok(Collapsed { log_ml, chol, h, rss })
}

/// Log marginal likelihood `ln p(y | lambda)` with `theta` and `sigma2`
/// integrated out, all constants included.
pub fn log_marginal_likelihood(stats: &SuffStats, lambda: &[bool], prior: &AtomPrior) -> Result<f64> {
    let c = collapse(stats, lambda, prior)?;
    let omega_ld = log_det(prior.omega_chol);
    let n = stats.n_obs as f64;
    Ok(c.log_ml - 0.5 * omega_ld - 0.5 * n * (2.0 * PI).ln() - 0.5 * stats.log_det_c + prior.nu1 * prior.nu2.ln()
        - ln_gamma(prior.nu1)
        + ln_gamma(prior.nu1 + 0.5 * n))
}

/// One Gibbs pass over the atom: each non-intercept indicator is redrawn
/// from its conditional with `theta` and `sigma2` integrated out, then
/// `sigma2 | lambda` and `theta | lambda, sigma2` are drawn exactly.
/// With empty statistics this is an exact draw from the baseline measure.
pub fn update_atom<R: Rng + ?Sized>(
    rng: &mut R,
    stats: &SuffStats,
    current: &[bool],
    prior: &AtomPrior,
) -> Result<ClusterAtom> {
    let d = current.len();
    let mut lambda = current.to_vec();
    lambda[0] = true;
    let log_g = prior.gamma.ln();
    let log_1g = (-prior.gamma).ln_1p();
    if stats.n_obs == 0 {
        for l in lambda.iter_mut().skip(1) {
            *l = rng.random::<f64>() < prior.gamma;
        }
        let sigma2 = inv_gamma(rng, prior.nu1, prior.nu2);
        let z = DVector::from_fn(d, |_, _| dist::std_normal(rng));
        let theta = prior.omega_chol.l_dirty().lower_triangle() * z * sigma2.sqrt();
        return ClusterAtom::new(theta, sigma2, lambda);
    }
    let mut cur = collapse(stats, &lambda, prior)?.log_ml;
    for s in 1..d {
        lambda[s] = !lambda[s];
        let alt = collapse(stats, &lambda, prior)?.log_ml;
        lambda[s] = !lambda[s];
        let (on, off) = if lambda[s] { (cur, alt) } else { (alt, cur) };
        let lo = on + log_g;
        let lf = off + log_1g;
        let p_on = 1.0 / (1.0 + (lf - lo).exp());
        let new = rng.random::<f64>() < p_on;
        if new != lambda[s] {
            lambda[s] = new;
            cur = alt;
        }
    }
    let c = collapse(stats, &lambda, prior)?;
    let sigma2 = inv_gamma(rng, prior.nu1 + 0.5 * stats.n_obs as f64, prior.nu2 + 0.5 * c.rss);
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Numerical(format!("atom variance draw {sigma2}")));
    }
    let theta = mvn_from_precision(rng, &c.chol, &c.h, sigma2);
    ClusterAtom::new(theta, sigma2, lambda)
}

/// `ln G0(atom)` given the Cholesky factor of `Omega` and `gamma`.
pub fn log_baseline(atom: &ClusterAtom, omega_chol: &Chol, gamma: f64, nu1: f64, nu2: f64) -> f64 {
    let d = atom.dim() as f64;
    let w = omega_chol.l_dirty().lower_triangle().solve_lower_triangular(&atom.theta).expect("positive Cholesky diagonal");
    let th = -0.5 * (d * (2.0 * PI * atom.sigma2).ln() + log_det(omega_chol) + w.norm_squared() / atom.sigma2);
    let sel: f64 = atom.lambda[1..].iter().map(|&l| if l { gamma.ln() } else { (-gamma).ln_1p() }).sum();
    th + dist::ln_inv_gamma_pdf(atom.sigma2, nu1, nu2) + sel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SplineBasis;
    use crate::dist::seeded;
    use crate::linalg::spd_inverse;

    fn setup() -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let basis = SplineBasis::new(vec![0.0, 1.0], 1).unwrap();
        let xs = [0.0, 0.5, 1.0, 1.5, 2.0];
        let b = basis.design_matrix(&xs).0;
        let y = DVector::from_vec(vec![0.1, 0.3, 0.2, 0.9, 1.4]);
        let omega = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5]);
        (b, y, omega)
    }

    // ln p(y | lambda) by direct quadrature over sigma2 of the Gaussian
    // marginal N(0, sigma2 (I + B Lambda Omega Lambda B')).
    fn brute_force_marginal(b: &DMatrix<f64>, y: &DVector<f64>, omega: &DMatrix<f64>, lambda: &[bool], nu1: f64, nu2: f64) -> f64 {
        let d = lambda.len();
        let lam = DMatrix::from_fn(d, d, |r, c| if r == c && lambda[r] { 1.0 } else { 0.0 });
        let bl = b * &lam;
        let base = DMatrix::identity(y.len(), y.len()) + &bl * omega * bl.transpose();
        // integrate over t = ln sigma2 with the trapezoid rule
        let (lo, hi, m) = (-15.0, 8.0, 40_000);
        let step = (hi - lo) / m as f64;
        let mut terms = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let t: f64 = lo + step * i as f64;
            let s2 = t.exp();
            let ll = dist::ln_mvn_zero_mean(y, &(&base * s2)).unwrap();
            let lp = dist::ln_inv_gamma_pdf(s2, nu1, nu2) + t;
            let w: f64 = if i == 0 || i == m { 0.5 } else { 1.0 };
            terms.push(ll + lp + w.ln());
        }
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + terms.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + step.ln()
    }

    #[test]
    fn marginal_likelihood_matches_quadrature() {
        let (b, y, omega) = setup();
        let omega_inv = spd_inverse(&omega, "omega").unwrap();
        let omega_chol = cholesky(&omega, "omega").unwrap();
        let prior = AtomPrior { omega: &omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma: 0.3, nu1: 2.0, nu2: 0.04 };
        let stats = SuffStats::from_curve(&b, &y);
        for lambda in [vec![true, false, false], vec![true, true, false], vec![true, true, true], vec![true, false, true]] {
            let got = log_marginal_likelihood(&stats, &lambda, &prior).unwrap();
            let want = brute_force_marginal(&b, &y, &omega, &lambda, 2.0, 0.04);
            assert!((got - want).abs() < 1e-6, "{lambda:?}: {got} vs {want}");
        }
    }

    #[test]
    fn whitened_stats_equal_correlated_likelihood() {
        let (b, y, _) = setup();
        let c = DMatrix::from_fn(5, 5, |r, s| if r == s { 1.5 } else { 0.3 });
        let chol = cholesky(&c, "c").unwrap();
        let st = SuffStats::whitened(&b, &y, &chol);
        let beta = DVector::from_vec(vec![0.1, 0.2, 0.5]);
        let direct = dist::ln_mvn_zero_mean(&(&y - &b * &beta), &(&c * 0.7)).unwrap();
        assert!((st.loglik(&beta, 0.7) - direct).abs() < 1e-12);
    }

    #[test]
    fn inclusion_posterior_matches_exact_probabilities() {
        // Enumerate all four lambda configurations and compare the Gibbs
        // chain's visit frequencies with the exact posterior.
        let (b, y, omega) = setup();
        let omega_inv = spd_inverse(&omega, "omega").unwrap();
        let omega_chol = cholesky(&omega, "omega").unwrap();
        let gamma = 0.4;
        let prior = AtomPrior { omega: &omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma, nu1: 2.0, nu2: 0.04 };
        let stats = SuffStats::from_curve(&b, &y);
        let configs = [[true, false, false], [true, true, false], [true, false, true], [true, true, true]];
        let logs: Vec<f64> = configs
            .iter()
            .map(|c| {
                let k = c[1..].iter().filter(|&&v| v).count() as f64;
                log_marginal_likelihood(&stats, c, &prior).unwrap() + k * gamma.ln() + (2.0 - k) * (1.0 - gamma).ln()
            })
            .collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
        let exact: Vec<f64> = logs.iter().map(|l| (l - mx).exp() / z).collect();

        let mut rng = seeded(17);
        let mut lambda = vec![true, false, false];
        let mut visits = [0usize; 4];
        let n = 60_000;
        for _ in 0..n {
            let atom = update_atom(&mut rng, &stats, &lambda, &prior).unwrap();
            lambda = atom.lambda.clone();
            let idx = configs.iter().position(|c| c.as_slice() == lambda.as_slice()).unwrap();
            visits[idx] += 1;
        }
        for (v, p) in visits.iter().zip(&exact) {
            let f = *v as f64 / n as f64;
            assert!((f - p).abs() < 0.015, "{visits:?} vs {exact:?}");
        }
    }

    #[test]
    fn empty_statistics_draw_from_baseline() {
        let (_, _, omega) = setup();
        let omega_inv = spd_inverse(&omega, "omega").unwrap();
        let omega_chol = cholesky(&omega, "omega").unwrap();
        let prior = AtomPrior { omega: &omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma: 0.25, nu1: 6.0, nu2: 1.0 };
        let stats = SuffStats::zeros(3);
        let mut rng = seeded(3);
        let n = 50_000;
        let mut on = 0usize;
        let mut s2 = 0.0;
        let mut th0sq = 0.0;
        for _ in 0..n {
            let a = update_atom(&mut rng, &stats, &[true, false, false], &prior).unwrap();
            on += a.lambda[1..].iter().filter(|&&l| l).count();
            s2 += a.sigma2;
            th0sq += a.theta[0] * a.theta[0];
        }
        assert!((on as f64 / (2 * n) as f64 - 0.25).abs() < 0.01);
        // E sigma2 = nu2 / (nu1 - 1) = 0.2 ; E theta0^2 = Omega_00 E sigma2 = 0.2
        assert!((s2 / n as f64 - 0.2).abs() < 0.005);
        assert!((th0sq / n as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn baseline_density_matches_direct_evaluation() {
        let (_, _, omega) = setup();
        let a = ClusterAtom::new(DVector::from_vec(vec![0.1, 0.0, -0.3]), 0.05, vec![true, false, true]).unwrap();
        let got = log_baseline(&a, &cholesky(&omega, "omega").unwrap(), 0.3, 2.0, 0.04);
        let want = dist::ln_mvn_zero_mean(&a.theta, &(&omega * 0.05)).unwrap()
            + dist::ln_inv_gamma_pdf(0.05, 2.0, 0.04)
            + 0.3f64.ln()
            + 0.7f64.ln();
        assert!((got - want).abs() < 1e-10);
    }
}
