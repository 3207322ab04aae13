//! Truncated blocked Gibbs sampler for the nested mixture: subjects are
//! clustered by the distribution their curves are drawn from, and curves are
//! clustered within each such distribution.
//!
//! Subject `i` has top-level component `z_i`; its replicate `j` has
//! bottom-level component `c_ij` within `z_i`, and
//! `y_ij ~ N(B_ij Lambda theta*_{c_ij z_i}, sigma*^2_{c_ij z_i} I)`.

use std::collections::HashMap;
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
use crate::mcmc::{concentration_target, counts, log_sum_exp, sample_log_categorical, LogWalk, Pins, RunSettings};
use crate::model::{ClusterAtom, Hyperparams, NestedDataset};
use crate::sampler_mean::{iw_mean, ChainReport};

#[derive(Debug, Clone)]
pub struct NestedChainState {
    /// Top-level component of each subject, `0..K`.
    pub z: Vec<usize>,
    /// Bottom-level component of each replicate, `0..L`, read within `z_i`.
    pub c: Vec<Vec<usize>>,
    pub top: StickWeights,
    /// One length-`L` stick vector per top-level component.
    pub bottom: Vec<StickWeights>,
    /// `atoms[k][l]`.
    pub atoms: Vec<Vec<ClusterAtom>>,
    pub omega: DMatrix<f64>,
    pub gamma: f64,
    pub nu2: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub iteration: u64,
    pub adapting: bool,
    /// Random walks for `a1, b1, a2, b2`.
    pub walks: [LogWalk; 4],
    pub rng: ChainRng,
}

impl NestedChainState {
    pub fn check(&self) -> Result<()> {
        let k = self.atoms.len();
        let l = self.atoms.first().map_or(0, |a| a.len());
        if self.top.len() != k || self.bottom.len() != k || self.z.iter().any(|&z| z >= k) {
            return Err(Error::Numerical("top-level allocation out of range".into()));
        }
        if self.c.iter().flatten().any(|&c| c >= l) || self.bottom.iter().any(|s| s.len() != l) {
            return Err(Error::Numerical("curve allocation out of range".into()));
        }
        for s in std::iter::once(&self.top).chain(&self.bottom) {
            let total: f64 = s.weights().iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Numerical(format!("stick weights sum to {total}")));
            }
        }
        if self.atoms.iter().flatten().any(|a| !(a.sigma2 > 0.0)) {
            return Err(Error::Numerical("non-positive atom variance".into()));
        }
        if !is_spd(&self.omega) {
            return Err(Error::NotPositiveDefinite("Omega".into()));
        }
        Ok(())
    }
}

struct Curve {
    design: usize,
    y: DVector<f64>,
    stats: SuffStats,
}

/// Mean curves of all atoms (columns `k * L + l`) on every distinct design,
/// with their squared norms and the atoms' variance terms.
struct AtomMeans {
    mu: Vec<DMatrix<f64>>,
    mu_sq: Vec<Vec<f64>>,
    log_var: Vec<f64>,
    inv_var: Vec<f64>,
}

impl AtomMeans {
    fn new(state: &NestedChainState, designs: &[DMatrix<f64>]) -> Self {
        let all: Vec<&ClusterAtom> = state.atoms.iter().flatten().collect();
        let d = all[0].dim();
        let beta = DMatrix::from_fn(d, all.len(), |r, c| if all[c].lambda[r] { all[c].theta[r] } else { 0.0 });
        let mu: Vec<DMatrix<f64>> = designs.iter().map(|b| b * &beta).collect();
        let mu_sq = mu.iter().map(|m| m.column_iter().map(|c| c.norm_squared()).collect()).collect();
        Self {
            mu,
            mu_sq,
            log_var: all.iter().map(|a| (std::f64::consts::TAU * a.sigma2).ln()).collect(),
            inv_var: all.iter().map(|a| 1.0 / a.sigma2).collect(),
        }
    }
}

pub struct NestedSampler {
    hyper: Hyperparams,
    k: usize,
    l: usize,
    pins: Pins,
    designs: Vec<DMatrix<f64>>,
    curves: Vec<Curve>,
    subjects: Vec<Range<usize>>,
}

impl NestedSampler {
    pub fn new(
        data: &NestedDataset,
        basis: &SplineBasis,
        hyper: Hyperparams,
        k: usize,
        l: usize,
        pins: Pins,
    ) -> Result<Self> {
        hyper.validate()?;
        if hyper.dim() != basis.dim() {
            return Err(Error::Dimension(format!(
                "hyperparameters have dimension {}, basis {}",
                hyper.dim(),
                basis.dim()
            )));
        }
        if k == 0 || l == 0 {
            return Err(Error::invalid("truncation levels K and L must be at least 1"));
        }
        crate::sampler_mean::validate_pins(&pins, basis.dim())?;
        let mut curves = Vec::with_capacity(data.num_replicates());
        let mut subjects = Vec::with_capacity(data.num_subjects());
        let mut designs = Vec::new();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for s in data.subjects() {
            let start = curves.len();
            for r in &s.replicates {
                let key: Vec<u64> = r.x.iter().map(|v| v.to_bits()).collect();
                let design = *seen.entry(key).or_insert_with(|| {
                    designs.push(basis.design_matrix(&r.x).0);
                    designs.len() - 1
                });
                let y = DVector::from_column_slice(&r.y);
                let stats = SuffStats::from_curve(&designs[design], &y);
                curves.push(Curve { design, y, stats });
            }
            subjects.push(start..curves.len());
        }
        Ok(Self { hyper, k, l, pins, designs, curves, subjects })
    }

    pub fn truncation(&self) -> (usize, usize) {
        (self.k, self.l)
    }

    /// Initial state: uniform allocations, sticks from the prior, atoms seeded
    /// from ridge fits of randomly chosen curves (remaining atoms from the
    /// baseline measure).
    pub fn init_state(&self, seed: u64) -> Result<NestedChainState> {
        let mut rng = seeded(seed);
        let h = &self.hyper;
        let d = h.dim();
        let (k, l) = (self.k, self.l);
        let a1 = self.pins.a1.unwrap_or(h.a1.mean());
        let b1 = self.pins.b1.unwrap_or(h.b1.mean());
        let a2 = self.pins.a2.unwrap_or(h.a2.mean());
        let b2 = self.pins.b2.unwrap_or(h.b2.mean());
        let gamma = self.pins.gamma.unwrap_or(h.eta1 / (h.eta1 + h.eta2));
        let nu2 = self.pins.nu2.unwrap_or(h.nu2);
        let omega = self.pins.omega.clone().unwrap_or_else(|| iw_mean(h.nu_omega, &h.omega0));

        let z: Vec<usize> = (0..self.subjects.len()).map(|_| rng.random_range(0..k)).collect();
        let c: Vec<Vec<usize>> =
            self.subjects.iter().map(|r| (0..r.len()).map(|_| rng.random_range(0..l)).collect()).collect();
        let top = StickWeights::sample(&mut rng, GdpParams::new(a1, b1)?, k)?;
        let bottom = (0..k)
            .map(|_| StickWeights::sample(&mut rng, GdpParams::new(a2, b2)?, l))
            .collect::<Result<Vec<_>>>()?;

        let ident = DMatrix::<f64>::identity(d, d);
        let mut fits = Vec::with_capacity(self.curves.len());
        let (mut rss, mut n) = (0.0, 0usize);
        for cv in &self.curves {
            let chol = cholesky(&(&cv.stats.gram + &ident), "ridge system")?;
            let th = chol.solve(&cv.stats.xty);
            rss += (cv.stats.yty - 2.0 * th.dot(&cv.stats.xty) + th.dot(&(&cv.stats.gram * &th))).max(0.0);
            n += cv.stats.n_obs;
            fits.push(th);
        }
        let s2 = (rss / n as f64).max(1e-12);
        let mut order: Vec<usize> = (0..self.curves.len()).collect();
        order.shuffle(&mut rng);

        let omega_inv = spd_inverse(&omega, "Omega")?;
        let omega_chol = cholesky(&omega, "Omega")?;
        let prior = AtomPrior { omega: &omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma, nu1: h.nu1, nu2 };
        let empty = SuffStats::zeros(d);
        let mut start = vec![false; d];
        start[0] = true;
        let mut atoms: Vec<Vec<ClusterAtom>> = (0..k).map(|_| Vec::with_capacity(l)).collect();
        for ll in 0..l {
            for (kk, row) in atoms.iter_mut().enumerate() {
                let atom = match order.get(ll * k + kk) {
                    Some(&ci) => ClusterAtom::new(fits[ci].clone(), s2, vec![true; d])?,
                    None => update_atom(&mut rng, &empty, &start, &prior)?,
                };
                row.push(atom);
            }
        }
        Ok(NestedChainState {
            z,
            c,
            top,
            bottom,
            atoms,
            omega,
            gamma,
            nu2,
            a1,
            b1,
            a2,
            b2,
            iteration: 0,
            adapting: false,
            walks: Default::default(),
            rng,
        })
    }

    /// `ll[j][k][l]`: log-likelihood of replicate `j` of subject `i` under
    /// atom `(l, k)`.
    fn curve_logliks(&self, means: &AtomMeans, i: usize) -> Vec<Vec<Vec<f64>>> {
        let l = self.l;
        self.curves[self.subjects[i].clone()]
            .iter()
            .map(|cv| {
                let cross = means.mu[cv.design].tr_mul(&cv.y);
                let mu_sq = &means.mu_sq[cv.design];
                let t = cv.stats.n_obs as f64;
                let mut out = vec![Vec::with_capacity(l); self.k];
                for (col, x) in cross.iter().enumerate() {
                    let rss = (cv.stats.yty - 2.0 * x + mu_sq[col]).max(0.0);
                    out[col / l].push(-0.5 * (t * means.log_var[col] + rss * means.inv_var[col]));
                }
                out
            })
            .collect()
    }

    fn top_logprobs(log_pi: &[f64], log_varpi: &[Vec<f64>], ll: &[Vec<Vec<f64>>]) -> Vec<f64> {
        let mut buf = Vec::new();
        (0..log_pi.len())
            .map(|k| {
                log_pi[k]
                    + ll.iter()
                        .map(|lj| {
                            buf.clear();
                            buf.extend(lj[k].iter().zip(&log_varpi[k]).map(|(a, b)| a + b));
                            log_sum_exp(&buf)
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    /// Unnormalised `ln P(z_i = k | rest)` with curve allocations summed out.
    pub fn subject_alloc_logprobs(&self, state: &NestedChainState, i: usize) -> Vec<f64> {
        let ll = self.curve_logliks(&AtomMeans::new(state, &self.designs), i);
        let log_varpi: Vec<Vec<f64>> = state.bottom.iter().map(|s| s.log_weights()).collect();
        Self::top_logprobs(&state.top.log_weights(), &log_varpi, &ll)
    }

    /// Unnormalised `ln P(c_ij = l | z_i, rest)`.
    pub fn curve_alloc_logprobs(&self, state: &NestedChainState, i: usize, j: usize) -> Vec<f64> {
        let k = state.z[i];
        let cv = &self.curves[self.subjects[i].start + j];
        state.bottom[k]
            .log_weights()
            .iter()
            .zip(&state.atoms[k])
            .map(|(lw, a)| lw + cv.stats.loglik(&a.effective(), a.sigma2))
            .collect()
    }

    pub fn sweep(&self, state: &mut NestedChainState) -> Result<()> {
        let h = &self.hyper;
        let d = h.dim();
        let (k, l) = (self.k, self.l);

        // allocations: z_i, then the curve allocations of subject i
        let means = AtomMeans::new(state, &self.designs);
        let log_pi = state.top.log_weights();
        let log_varpi: Vec<Vec<f64>> = state.bottom.iter().map(|s| s.log_weights()).collect();
        for i in 0..self.subjects.len() {
            let ll = self.curve_logliks(&means, i);
            let lp = Self::top_logprobs(&log_pi, &log_varpi, &ll);
            let zi = sample_log_categorical(&mut state.rng, &lp);
            state.z[i] = zi;
            for (j, lj) in ll.iter().enumerate() {
                let lc: Vec<f64> = lj[zi].iter().zip(&log_varpi[zi]).map(|(a, b)| a + b).collect();
                state.c[i][j] = sample_log_categorical(&mut state.rng, &lc);
            }
        }

        // sticks
        let m_k = counts(state.z.iter().copied(), k);
        let p_top = GdpParams { a: state.a1, b: state.b1 };
        state.top = StickWeights::sample_posterior(&mut state.rng, p_top, &m_k)?;
        let mut n_lk = vec![vec![0usize; l]; k];
        for (i, ci) in state.c.iter().enumerate() {
            for &cc in ci {
                n_lk[state.z[i]][cc] += 1;
            }
        }
        let p_bot = GdpParams { a: state.a2, b: state.b2 };
        for (kk, n) in n_lk.iter().enumerate() {
            state.bottom[kk] = StickWeights::sample_posterior(&mut state.rng, p_bot, n)?;
        }

        // atoms
        let mut agg = vec![vec![SuffStats::zeros(d); l]; k];
        for (i, range) in self.subjects.iter().enumerate() {
            for (j, ci) in range.clone().enumerate() {
                agg[state.z[i]][state.c[i][j]].add(&self.curves[ci].stats);
            }
        }
        let omega_inv = spd_inverse(&state.omega, "Omega")?;
        let omega_chol = cholesky(&state.omega, "Omega")?;
        let prior = AtomPrior { omega: &state.omega, omega_chol: &omega_chol, omega_inv: &omega_inv, gamma: state.gamma, nu1: h.nu1, nu2: state.nu2 };
        let mut atoms = Vec::with_capacity(k);
        for (kk, row) in agg.iter().enumerate() {
            let mut new_row = Vec::with_capacity(l);
            for (ll, st) in row.iter().enumerate() {
                new_row.push(update_atom(&mut state.rng, st, &state.atoms[kk][ll].lambda, &prior)?);
            }
            atoms.push(new_row);
        }
        state.atoms = atoms;

        // Omega, gamma, nu2
        if self.pins.omega.is_none() {
            let mut scale = h.omega0.clone();
            for a in state.atoms.iter().flatten() {
                scale += &a.theta * a.theta.transpose() / a.sigma2;
            }
            symmetrize(&mut scale);
            state.omega = dist::inv_wishart(&mut state.rng, h.nu_omega + (k * l) as f64, &scale)?;
        }
        if self.pins.gamma.is_none() {
            let on: usize = state.atoms.iter().flatten().map(|a| a.lambda[1..].iter().filter(|&&x| x).count()).sum();
            let off = k * l * (d - 1) - on;
            state.gamma = dist::beta(&mut state.rng, h.eta1 + on as f64, h.eta2 + off as f64);
        }
        if self.pins.nu2.is_none() {
            let inv: f64 = state.atoms.iter().flatten().map(|a| 1.0 / a.sigma2).sum();
            state.nu2 = dist::gamma(&mut state.rng, h.rho + (k * l) as f64 * h.nu1, h.psi + inv);
        }

        // concentrations
        let adapting = state.adapting;
        let top = [&state.top];
        let bottom: Vec<&StickWeights> = state.bottom.iter().collect();
        let [w1, w2, w3, w4] = &mut state.walks;
        if self.pins.a1.is_none() {
            let b1 = state.b1;
            state.a1 = w1.step(&mut state.rng, state.a1, adapting, |x| {
                concentration_target(h.a1, &top, |a| GdpParams { a, b: b1 }, x)
            });
        }
        if self.pins.b1.is_none() {
            let a1 = state.a1;
            state.b1 = w2.step(&mut state.rng, state.b1, adapting, |x| {
                concentration_target(h.b1, &top, |b| GdpParams { a: a1, b }, x)
            });
        }
        if self.pins.a2.is_none() {
            let b2 = state.b2;
            state.a2 = w3.step(&mut state.rng, state.a2, adapting, |x| {
                concentration_target(h.a2, &bottom, |a| GdpParams { a, b: b2 }, x)
            });
        }
        if self.pins.b2.is_none() {
            let a2 = state.a2;
            state.b2 = w4.step(&mut state.rng, state.b2, adapting, |x| {
                concentration_target(h.b2, &bottom, |b| GdpParams { a: a2, b }, x)
            });
        }

        state.iteration += 1;
        debug_assert!(state.check().is_ok(), "{:?}", state.check());
        Ok(())
    }

    /// Log posterior density of the full state, up to a constant.
    pub fn log_posterior(&self, state: &NestedChainState) -> Result<f64> {
        let h = &self.hyper;
        let log_pi = state.top.log_weights();
        let log_varpi: Vec<Vec<f64>> = state.bottom.iter().map(|s| s.log_weights()).collect();
        let mut lp = 0.0;
        for (i, range) in self.subjects.iter().enumerate() {
            let k = state.z[i];
            lp += log_pi[k];
            for (j, ci) in range.clone().enumerate() {
                let l = state.c[i][j];
                let a = &state.atoms[k][l];
                lp += log_varpi[k][l] + self.curves[ci].stats.loglik(&a.effective(), a.sigma2);
            }
        }
        lp += state.top.log_prior(GdpParams { a: state.a1, b: state.b1 });
        let p_bot = GdpParams { a: state.a2, b: state.b2 };
        lp += state.bottom.iter().map(|s| s.log_prior(p_bot)).sum::<f64>();
        let omega_chol = cholesky(&state.omega, "Omega")?;
        for a in state.atoms.iter().flatten() {
            lp += log_baseline(a, &omega_chol, state.gamma, h.nu1, state.nu2);
        }
        lp += dist::ln_inv_wishart_pdf(&state.omega, h.nu_omega, &h.omega0)?;
        lp += dist::ln_beta_pdf(state.gamma, h.eta1, h.eta2);
        lp += dist::ln_gamma_pdf(state.nu2, h.rho, h.psi);
        for (x, g) in [(state.a1, h.a1), (state.b1, h.b1), (state.a2, h.a2), (state.b2, h.b2)] {
            lp += dist::ln_gamma_pdf(x, g.shape, g.rate);
        }
        Ok(lp)
    }

    pub fn draw(&self, state: &NestedChainState) -> Result<Draw> {
        let log_posterior = self.log_posterior(state)?;
        if !log_posterior.is_finite() {
            return Err(Error::Numerical(format!("log posterior {log_posterior} at sweep {}", state.iteration)));
        }
        let mut used = vec![vec![false; self.l]; self.k];
        for (i, ci) in state.c.iter().enumerate() {
            for &cc in ci {
                used[state.z[i]][cc] = true;
            }
        }
        let mut atoms = Vec::new();
        for (kk, row) in used.iter().enumerate() {
            for (ll, &u) in row.iter().enumerate() {
                if u {
                    let a = &state.atoms[kk][ll];
                    atoms.push(AtomRecord {
                        top: kk as u32,
                        bottom: ll as u32,
                        theta: a.theta.iter().copied().collect(),
                        sigma2: a.sigma2,
                        lambda: a.lambda.clone(),
                    });
                }
            }
        }
        Ok(Draw {
            iteration: state.iteration,
            log_posterior,
            z: state.z.iter().map(|&z| z as u32).collect(),
            c: state.c.iter().map(|ci| ci.iter().map(|&c| c as u32).collect()).collect(),
            atoms,
            concentrations: vec![state.a1, state.b1, state.a2, state.b2],
            gamma: state.gamma,
            nu2: state.nu2,
            omega_norm: frobenius(&state.omega),
            sigma_norm: None,
        })
    }

    /// Replace every response with a draw from the likelihood given the
    /// state. Used for successive-conditional simulation checks.
    pub fn simulate_responses(&mut self, state: &mut NestedChainState) {
        for (i, range) in self.subjects.iter().enumerate() {
            let k = state.z[i];
            for (j, ci) in range.clone().enumerate() {
                let a = &state.atoms[k][state.c[i][j]];
                let cv = &mut self.curves[ci];
                let b = &self.designs[cv.design];
                let sd = a.sigma2.sqrt();
                cv.y = (b * a.effective()).map(|m| m + sd * dist::std_normal(&mut state.rng));
                cv.stats = SuffStats::from_curve(b, &cv.y);
            }
        }
    }
}

pub fn run_chain_nested<F>(sampler: &NestedSampler, run: RunSettings, seed: u64, mut sink: F) -> Result<ChainReport>
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
    Ok(ChainReport { retained, acceptance: state.walks.iter().map(|w| w.acceptance_rate()).collect() })
}

pub fn collect_chain_nested(sampler: &NestedSampler, run: RunSettings, seed: u64) -> Result<Vec<Draw>> {
    let mut out = Vec::with_capacity(run.retained());
    run_chain_nested(sampler, run, seed, |d| {
        out.push(d);
        Ok(())
    })?;
    Ok(out)
}
