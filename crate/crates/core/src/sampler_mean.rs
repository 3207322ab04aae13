//! Truncated blocked Gibbs sampler for mean-curve clustering.
//!
//! Subject `i` belongs to component `z_i`; replicate `j` of that subject has
//! coefficients `theta_ij ~ N(Lambda theta*_k, sigma*_k^2 Sigma)` and
//! observations `y_ij ~ N(B_ij theta_ij, sigma*_k^2 I)`.
//!
//! Allocations and atoms are updated with `theta_ij` integrated out, after
//! which `theta_ij` is redrawn from its full conditional. This ordering is a
//! valid partially collapsed Gibbs scan.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::archive::{AtomRecord, Draw};
use crate::atoms::{log_baseline, update_atom, AtomPrior, SuffStats};
use crate::basis::SplineBasis;
use crate::dist::{self, seeded, ChainRng};
use crate::error::{Error, Result};
use crate::gdp::{GdpParams, StickWeights};
use crate::linalg::{cholesky, frobenius, is_spd, spd_inverse, symmetrize};
use crate::mcmc::{concentration_target, counts, sample_log_categorical, LogWalk, Pins, RunSettings};
use crate::model::{ClusterAtom, Hyperparams, NestedDataset};

#[derive(Debug, Clone)]
pub struct MeanChainState {
    /// Component of each subject, `0..K`.
    pub z: Vec<usize>,
    pub sticks: StickWeights,
    pub atoms: Vec<ClusterAtom>,
    /// Replicate coefficients in dataset order.
    pub theta_ij: Vec<DVector<f64>>,
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub iteration: u64,
    /// Step-size adaptation of the concentration walks is active.
    pub adapting: bool,
    pub walk_a: LogWalk,
    pub walk_b: LogWalk,
    pub rng: ChainRng,
}

impl MeanChainState {
    /// Structural invariants; returns a description of the first violation.
    pub fn check(&self) -> Result<()> {
        let k = self.atoms.len();
        if self.sticks.len() != k || self.z.iter().any(|&z| z >= k) {
            return Err(Error::Numerical("allocation out of range".into()));
        }
        let total: f64 = self.sticks.weights().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("stick weights sum to {total}")));
        }
        if self.atoms.iter().any(|a| !(a.sigma2 > 0.0)) {
            return Err(Error::Numerical("non-positive atom variance".into()));
        }
        if !is_spd(&self.omega) || !is_spd(&self.sigma) {
            return Err(Error::NotPositiveDefinite("Omega or Sigma".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> GdpParams {
        GdpParams { a: self.a, b: self.b }
    }
}

struct Curve {
    b: DMatrix<f64>,
    y: DVector<f64>,
    btb: DMatrix<f64>,
}

/// Data-dependent quantities and settings shared by every sweep of a chain.
pub struct MeanSampler {
    hyper: Hyperparams,
    k: usize,
    pins: Pins,
    curves: Vec<Curve>,
    subjects: Vec<Range<usize>>,
}

pub(crate) fn validate_pins(pins: &Pins, dim: usize) -> Result<()> {
    for v in [pins.a, pins.b, pins.a1, pins.b1, pins.a2, pins.b2, pins.nu2].into_iter().flatten() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("pinned value {v} must be positive")));
        }
    }
    if let Some(g) = pins.gamma {
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::invalid(format!("pinned gamma {g} must lie in (0, 1)")));
        }
    }
    for m in [&pins.omega, &pins.sigma].into_iter().flatten() {
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::Dimension("pinned matrix does not match basis dimension".into()));
        }
        cholesky(m, "pinned matrix")?;
    }
    Ok(())
}

/// Prior mean of an inverse-Wishart, or its scale when the mean is undefined.
pub(crate) fn iw_mean(dof: f64, scale: &DMatrix<f64>) -> DMatrix<f64> {
    let d = scale.nrows() as f64;
    if dof > d + 1.0 {
        scale / (dof - d - 1.0)
    } else {
        scale.clone()
    }
}

impl MeanSampler {
    pub fn new(data: &NestedDataset, basis: &SplineBasis, hyper: Hyperparams, k: usize, pins: Pins) -> Result<Self> {
        hyper.validate()?;
        if hyper.dim() != basis.dim() {
            return Err(Error::Dimension(format!(
                "hyperparameters have dimension {}, basis {}",
                hyper.dim(),
                basis.dim()
            )));
        }
        if k == 0 {
            return Err(Error::invalid("truncation level K must be at least 1"));
        }
        validate_pins(&pins, basis.dim())?;
        let mut curves = Vec::with_capacity(data.num_replicates());
        let mut subjects = Vec::with_capacity(data.num_subjects());
        for s in data.subjects() {
            let start = curves.len();
            for r in &s.replicates {
                let b = basis.design_matrix(&r.x).0;
                let btb = b.transpose() * &b;
                curves.push(Curve { b, y: DVector::from_column_slice(&r.y), btb });
            }
            subjects.push(start..curves.len());
        }
        Ok(Self { hyper, k, pins, curves, subjects })
    }

    pub fn num_components(&self) -> usize {
        self.k
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn init_state(&self, seed: u64) -> Result<MeanChainState> {
        let mut rng = seeded(seed);
        let h = &self.hyper;
        let d = h.dim();
        let a = self.pins.a.unwrap_or(h.a.mean());
        let b = self.pins.b.unwrap_or(h.b.mean());
        let gamma = self.pins.gamma.unwrap_or(h.eta1 / (h.eta1 + h.eta2));
        let omega = self.pins.omega.clone().unwrap_or_else(|| iw_mean(h.nu_omega, &h.omega0));
        let z: Vec<usize> = (0..self.subjects.len()).map(|_| rng.random_range(0..self.k)).collect();
        let sticks = StickWeights::sample(&mut rng, GdpParams::new(a, b)?, self.k)?;
        let omega_inv = spd_inverse(&omega, "Omega")?;
        let omega_chol = cholesky(&omega, "Omega")?;
        let prior = AtomPrior { omega: &omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma, nu1: h.nu1, nu2: h.nu2 };
        let ident = DMatrix::<f64>::identity(d, d);
        let theta_ij = self
            .curves
            .iter()
            .map(|c| {
                let chol = cholesky(&(&c.btb + &ident), "ridge system")?;
                Ok(chol.solve(&(c.b.transpose() * &c.y)))
            })
            .collect::<Result<Vec<_>>>()?;
        let (sigma_init, s2) = self.initial_sigma(&theta_ij);
        let sigma = self.pins.sigma.clone().unwrap_or(sigma_init);
        let mut order: Vec<usize> = (0..self.subjects.len()).collect();
        order.shuffle(&mut rng);
        let empty = SuffStats::zeros(d);
        let mut start = vec![false; d];
        start[0] = true;
        let mut atoms = Vec::with_capacity(self.k);
        for kk in 0..self.k {
            match order.get(kk) {
                Some(&i) => {
                    let range = self.subjects[i].clone();
                    let m = range.len() as f64;
                    let mean = theta_ij[range].iter().fold(DVector::zeros(d), |acc, t| acc + t) / m;
                    atoms.push(ClusterAtom::new(mean, s2, vec![true; d])?);
                }
                None => atoms.push(update_atom(&mut rng, &empty, &start, &prior)?),
            }
        }
        Ok(MeanChainState {
            z,
            sticks,
            atoms,
            theta_ij,
            omega,
            sigma,
            gamma,
            a,
            b,
            iteration: 0,
            adapting: false,
            walk_a: LogWalk::default(),
            walk_b: LogWalk::default(),
            rng,
        })
    }

    /// Conditional-mean style estimate of `Sigma` from the within-subject
    /// spread of the ridge fits, scaled by their pooled residual variance.
    /// Also returns the pooled residual variance.
    fn initial_sigma(&self, theta_ij: &[DVector<f64>]) -> (DMatrix<f64>, f64) {
        let h = &self.hyper;
        let d = h.dim();
        let (mut rss, mut n) = (0.0, 0usize);
        for (c, th) in self.curves.iter().zip(theta_ij) {
            rss += (&c.y - &c.b * th).norm_squared();
            n += c.y.len();
        }
        let s2 = (rss / n as f64).max(1e-12);
        let mut scale = h.sigma0.clone();
        for range in &self.subjects {
            let m = range.len() as f64;
            let mean = theta_ij[range.clone()].iter().fold(DVector::zeros(d), |acc, t| acc + t) / m;
            for t in &theta_ij[range.clone()] {
                let e = t - &mean;
                scale += &e * e.transpose() / s2;
            }
        }
        symmetrize(&mut scale);
        (scale / (h.nu_sigma + self.curves.len() as f64 + d as f64 + 1.0), s2)
    }

    /// Whitened statistics of subject `i` under `C = I + B Sigma B'`.
    pub fn subject_stats(&self, sigma: &DMatrix<f64>, i: usize) -> Result<SuffStats> {
        let mut acc = SuffStats::zeros(sigma.nrows());
        for c in &self.curves[self.subjects[i].clone()] {
            let t = c.y.len();
            let mut cov = &c.b * sigma * c.b.transpose();
            for r in 0..t {
                cov[(r, r)] += 1.0;
            }
            symmetrize(&mut cov);
            let chol = cholesky(&cov, "replicate marginal covariance")?;
            acc.add(&SuffStats::whitened(&c.b, &c.y, &chol));
        }
        Ok(acc)
    }

    fn all_subject_stats(&self, sigma: &DMatrix<f64>) -> Result<Vec<SuffStats>> {
        (0..self.subjects.len()).map(|i| self.subject_stats(sigma, i)).collect()
    }

    fn alloc_logprobs(state: &MeanChainState, stats: &SuffStats, log_w: &[f64], betas: &[DVector<f64>]) -> Vec<f64> {
        state.atoms.iter().zip(betas).zip(log_w).map(|((a, beta), lw)| lw + stats.loglik(beta, a.sigma2)).collect()
    }

    /// Unnormalised `ln P(z_i = k | rest)` with replicate coefficients
    /// integrated out.
    pub fn subject_alloc_logprobs(&self, state: &MeanChainState, i: usize) -> Result<Vec<f64>> {
        let stats = self.subject_stats(&state.sigma, i)?;
        let betas: Vec<_> = state.atoms.iter().map(|a| a.effective()).collect();
        Ok(Self::alloc_logprobs(state, &stats, &state.sticks.log_weights(), &betas))
    }

    /// One full scan of the Gibbs sampler.
    pub fn sweep(&self, state: &mut MeanChainState) -> Result<()> {
        let h = &self.hyper;
        let d = h.dim();
        let stats = self.all_subject_stats(&state.sigma)?;

        // allocations
        let log_w = state.sticks.log_weights();
        let betas: Vec<_> = state.atoms.iter().map(|a| a.effective()).collect();
        for (i, st) in stats.iter().enumerate() {
            let lp = Self::alloc_logprobs(state, st, &log_w, &betas);
            state.z[i] = sample_log_categorical(&mut state.rng, &lp);
        }

        // sticks
        let n_k = counts(state.z.iter().copied(), self.k);
        let params = state.params();
        state.sticks = StickWeights::sample_posterior(&mut state.rng, params, &n_k)?;

        // atoms
        let omega_inv = spd_inverse(&state.omega, "Omega")?;
        let omega_chol = cholesky(&state.omega, "Omega")?;
        let prior = AtomPrior { omega: &state.omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma: state.gamma, nu1: h.nu1, nu2: h.nu2 };
        let mut agg = vec![SuffStats::zeros(d); self.k];
        for (i, st) in stats.iter().enumerate() {
            agg[state.z[i]].add(st);
        }
        let mut atoms = Vec::with_capacity(self.k);
        for (kk, st) in agg.iter().enumerate() {
            atoms.push(update_atom(&mut state.rng, st, &state.atoms[kk].lambda, &prior)?);
        }
        state.atoms = atoms;

        // replicate coefficients
        let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
        for (i, range) in self.subjects.iter().enumerate() {
            let atom = &state.atoms[state.z[i]];
            let prior_h = &sigma_inv * atom.effective();
            for ci in range.clone() {
                let c = &self.curves[ci];
                let prec = &sigma_inv + &c.btb;
                let chol = cholesky(&prec, "replicate coefficient precision")?;
                let rhs = &prior_h + c.b.transpose() * &c.y;
                state.theta_ij[ci] = dist::mvn_from_precision(&mut state.rng, &chol, &rhs, atom.sigma2);
            }
        }

        // covariance matrices
        if self.pins.sigma.is_none() {
            let mut scale = h.sigma0.clone();
            for (i, range) in self.subjects.iter().enumerate() {
                let atom = &state.atoms[state.z[i]];
                let beta = atom.effective();
                for ci in range.clone() {
                    let e = (&state.theta_ij[ci] - &beta) / atom.sigma2.sqrt();
                    scale += &e * e.transpose();
                }
            }
            symmetrize(&mut scale);
            state.sigma = dist::inv_wishart(&mut state.rng, h.nu_sigma + self.curves.len() as f64, &scale)?;
        }
        if self.pins.omega.is_none() {
            let mut scale = h.omega0.clone();
            for a in &state.atoms {
                scale += &a.theta * a.theta.transpose() / a.sigma2;
            }
            symmetrize(&mut scale);
            state.omega = dist::inv_wishart(&mut state.rng, h.nu_omega + self.k as f64, &scale)?;
        }

        // inclusion probability
        if self.pins.gamma.is_none() {
            let on: usize = state.atoms.iter().map(|a| a.lambda[1..].iter().filter(|&&l| l).count()).sum();
            let off = self.k * (d - 1) - on;
            state.gamma = dist::beta(&mut state.rng, h.eta1 + on as f64, h.eta2 + off as f64);
        }

        // concentrations
        let sticks = [&state.sticks];
        if self.pins.a.is_none() {
            let b = state.b;
            state.a = state.walk_a.step(&mut state.rng, state.a, state.adapting, |x| {
                concentration_target(h.a, &sticks, |a| GdpParams { a, b }, x)
            });
        }
        if self.pins.b.is_none() {
            let a = state.a;
            state.b = state.walk_b.step(&mut state.rng, state.b, state.adapting, |x| {
                concentration_target(h.b, &sticks, |b| GdpParams { a, b }, x)
            });
        }

        state.iteration += 1;
        debug_assert!(state.check().is_ok(), "{:?}", state.check());
        Ok(())
    }

    /// Log posterior density of the state with replicate coefficients
    /// integrated out, up to a constant.
    pub fn log_posterior(&self, state: &MeanChainState) -> Result<f64> {
        let h = &self.hyper;
        let stats = self.all_subject_stats(&state.sigma)?;
        let log_w = state.sticks.log_weights();
        let mut lp = 0.0;
        for (i, st) in stats.iter().enumerate() {
            let atom = &state.atoms[state.z[i]];
            lp += log_w[state.z[i]] + st.loglik(&atom.effective(), atom.sigma2);
        }
        lp += state.sticks.log_prior(state.params());
        let omega_chol = cholesky(&state.omega, "Omega")?;
        for a in &state.atoms {
            lp += log_baseline(a, &omega_chol, state.gamma, h.nu1, h.nu2);
        }
        lp += dist::ln_inv_wishart_pdf(&state.omega, h.nu_omega, &h.omega0)?;
        lp += dist::ln_inv_wishart_pdf(&state.sigma, h.nu_sigma, &h.sigma0)?;
        lp += dist::ln_beta_pdf(state.gamma, h.eta1, h.eta2);
        lp += dist::ln_gamma_pdf(state.a, h.a.shape, h.a.rate) + dist::ln_gamma_pdf(state.b, h.b.shape, h.b.rate);
        Ok(lp)
    }

    /// Archive record of the current state: occupied atoms only.
    pub fn draw(&self, state: &MeanChainState) -> Result<Draw> {
        let log_posterior = self.log_posterior(state)?;
        if !log_posterior.is_finite() {
            return Err(Error::Numerical(format!("log posterior {log_posterior} at sweep {}", state.iteration)));
        }
        let n_k = counts(state.z.iter().copied(), self.k);
        let atoms = n_k
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(kk, _)| {
                let a = &state.atoms[kk];
                AtomRecord {
                    top: kk as u32,
                    bottom: 0,
                    theta: a.theta.iter().copied().collect(),
                    sigma2: a.sigma2,
                    lambda: a.lambda.clone(),
                }
            })
            .collect();
        Ok(Draw {
            iteration: state.iteration,
            log_posterior,
            z: state.z.iter().map(|&z| z as u32).collect(),
            c: Vec::new(),
            atoms,
            concentrations: vec![state.a, state.b],
            gamma: state.gamma,
            nu2: self.hyper.nu2,
            omega_norm: frobenius(&state.omega),
            sigma_norm: Some(frobenius(&state.sigma)),
        })
    }

    /// Replace every response with a draw from the likelihood given the
    /// state. Used for successive-conditional simulation checks.
    pub fn simulate_responses(&mut self, state: &mut MeanChainState) {
        for (i, range) in self.subjects.iter().enumerate() {
            let sd = state.atoms[state.z[i]].sigma2.sqrt();
            for ci in range.clone() {
                let c = &mut self.curves[ci];
                let mu = &c.b * &state.theta_ij[ci];
                c.y = mu.map(|m| m + sd * dist::std_normal(&mut state.rng));
            }
        }
    }

    /// Current responses in dataset order.
    pub fn responses(&self) -> Vec<Vec<f64>> {
        self.curves.iter().map(|c| c.y.iter().copied().collect()).collect()
    }
}

/// Summary of a finished chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub retained: usize,
    /// Final MH acceptance rate per sampled concentration parameter.
    pub acceptance: Vec<f64>,
}

/// Run one chain, passing each retained draw to `sink`.
pub fn run_chain_mean<F>(
    sampler: &MeanSampler,
    run: RunSettings,
    seed: u64,
    mut sink: F,
) -> Result<ChainReport>
where
    F: FnMut(Draw) -> Result<()>,
{
    let mut state = sampler.init_state(seed)?;
    let mut retained = 0;
    for s in 1..=run.sweeps {
        state.adapting = s <= run.burnin;
        sampler.sweep(&mut state)?;
        if run.keeps(s) {
            sink(sampler.draw(&state)?)?;
            retained += 1;
        }
    }
    Ok(ChainReport { retained, acceptance: vec![state.walk_a.acceptance_rate(), state.walk_b.acceptance_rate()] })
}

/// Run one chain and collect its retained draws.
pub fn collect_chain_mean(sampler: &MeanSampler, run: RunSettings, seed: u64) -> Result<Vec<Draw>> {
    let mut out = Vec::with_capacity(run.retained());
    run_chain_mean(sampler, run, seed, |d| {
        out.push(d);
        Ok(())
    })?;
    Ok(out)
}
