//! Pieces shared by both Gibbs samplers.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dist;
use crate::error::{Error, Result};
use crate::gdp::{GdpParams, StickWeights};
use crate::model::GammaPrior;

/// Values held fixed instead of being sampled. Unset fields are sampled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pins {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub a1: Option<f64>,
    pub b1: Option<f64>,
    pub a2: Option<f64>,
    pub b2: Option<f64>,
    pub gamma: Option<f64>,
    pub nu2: Option<f64>,
    pub omega: Option<DMatrix<f64>>,
    pub sigma: Option<DMatrix<f64>>,
}

/// Sweep schedule: `sweeps` in total, the first `burnin` discarded, every
/// `thin`-th sweep after that retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
}

impl RunSettings {
    pub fn new(sweeps: usize, burnin: usize, thin: usize) -> Result<Self> {
        if sweeps <= burnin {
            return Err(Error::invalid(format!("sweeps ({sweeps}) must exceed burnin ({burnin})")));
        }
        if thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        Ok(Self { sweeps, burnin, thin })
    }

    /// Whether sweep number `s` (1-based) is retained.
    pub fn keeps(&self, s: usize) -> bool {
        s > self.burnin && (s - self.burnin - 1) % self.thin == 0
    }

    pub fn retained(&self) -> usize {
        (self.sweeps - self.burnin).div_ceil(self.thin)
    }
}

/// Target acceptance rate of the concentration random walks.
pub const TARGET_ACCEPT: f64 = 0.35;
const WINDOW: usize = 25;

/// Random-walk Metropolis on `ln x` with a step size tuned toward
/// [`TARGET_ACCEPT`] while `adapting` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWalk {
    pub step: f64,
    pub accepted: u64,
    pub proposed: u64,
    window_acc: usize,
    window_n: usize,
}

impl Default for LogWalk {
    fn default() -> Self {
        Self { step: 0.5, accepted: 0, proposed: 0, window_acc: 0, window_n: 0 }
    }
}

impl LogWalk {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// One MH step for a positive parameter with log-density `target`.
    pub fn step<R, F>(&mut self, rng: &mut R, x: f64, adapting: bool, target: F) -> f64
    where
        R: Rng + ?Sized,
        F: Fn(f64) -> f64,
    {
        let prop = x * (self.step * dist::std_normal(rng)).exp();
        let log_ratio = target(prop) - target(x) + prop.ln() - x.ln();
        let accept = prop.is_finite() && prop > 0.0 && dist::uniform_pos(rng).ln() < log_ratio;
        self.proposed += 1;
        if accept {
            self.accepted += 1;
        }
        if adapting {
            self.window_n += 1;
            if accept {
                self.window_acc += 1;
            }
            if self.window_n == WINDOW {
                let rate = self.window_acc as f64 / WINDOW as f64;
                self.step = (self.step * (rate - TARGET_ACCEPT).exp()).clamp(1e-3, 5.0);
                self.window_n = 0;
                self.window_acc = 0;
            }
        }
        if accept {
            prop
        } else {
            x
        }
    }
}

/// Log full conditional, up to a constant, of the concentration pair given
/// stick fractions from one or more truncated processes.
pub fn concentration_target(prior: GammaPrior, sticks: &[&StickWeights], params: impl Fn(f64) -> GdpParams, x: f64) -> f64 {
    if !(x > 0.0 && x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let p = params(x);
    dist::ln_gamma_pdf(x, prior.shape, prior.rate) + sticks.iter().map(|s| s.log_prior(p)).sum::<f64>()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Draw an index with probability proportional to `exp(log_w)`, using a
/// single uniform variate.
pub fn sample_log_categorical<R: Rng + ?Sized>(rng: &mut R, log_w: &[f64]) -> usize {
    let mx = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|x| (x - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

/// Occupancy counts of `labels` over `k` components.
pub fn counts(labels: impl IntoIterator<Item = usize>, k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for l in labels {
        c[l] += 1;
    }
    c
}

/// Mean of a trace with its batch-means standard error and the implied
/// effective sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub mean: f64,
    pub se: f64,
    pub ess: f64,
}

/// Batch-means summary of an autocorrelated trace using `batches` equal
/// batches (a trailing remainder is dropped).
pub fn batch_means(xs: &[f64], batches: usize) -> Result<TraceSummary> {
    if batches < 2 || xs.len() < 2 * batches {
        return Err(Error::invalid("batch means need at least two batches of two draws"));
    }
    let size = xs.len() / batches;
    let used = &xs[..size * batches];
    let n = used.len() as f64;
    let mean = used.iter().sum::<f64>() / n;
    let var = used.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let bm: Vec<f64> = used.chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let bvar = bm.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (batches as f64 - 1.0);
    let se = (bvar / batches as f64).sqrt();
    let ess = if se > 0.0 { var / (se * se) } else { n };
    Ok(TraceSummary { mean, se, ess })
}
