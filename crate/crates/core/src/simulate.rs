//! Synthetic nested datasets with known subject and curve groupings.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::model::{NestedDataset, Replicate, Subject};

/// A group of subjects sharing a distribution over curve shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub subjects: usize,
    pub replicates: usize,
    /// Mixing weights over [`GeneratorSpec::shapes`].
    pub mixture: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    /// Covariate values shared by every replicate.
    pub grid: Vec<f64>,
    /// Curve shapes as values on `grid`.
    pub shapes: Vec<Vec<f64>>,
    pub groups: Vec<GroupSpec>,
    /// Observation noise standard deviation.
    pub noise_sd: f64,
    /// Standard deviation of a per-replicate vertical shift.
    pub replicate_sd: f64,
    /// When set, each subject gets shape counts proportional to the mixture
    /// (largest remainder) in shuffled order; otherwise shapes are drawn
    /// independently.
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTruth {
    /// Group index of every subject.
    pub subject_labels: Vec<usize>,
    /// Shape index of every replicate, per subject.
    pub curve_labels: Vec<Vec<usize>>,
}

fn day_grid() -> Vec<f64> {
    (-10..=2).map(f64::from).collect()
}

fn hinge(x: f64, knot: f64) -> f64 {
    (x - knot).max(0.0)
}

/// Root-mean-square distance between two shapes on the grid.
pub fn rms_distance(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn min_separation(shapes: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..shapes.len() {
        for j in 0..i {
            best = best.min(rms_distance(&shapes[i], &shapes[j]));
        }
    }
    best
}

impl GeneratorSpec {
    /// Three well-separated piecewise-linear mean curves on days -10..2, one
    /// group per curve, noise sd equal to `noise_ratio` times the minimum
    /// RMS separation.
    pub fn three_means(subjects_per_group: usize, replicates: usize, noise_ratio: f64) -> Self {
        let grid = day_grid();
        let shapes: Vec<Vec<f64>> = vec![
            grid.iter().map(|&x| -0.5 + 0.6 * hinge(x, -1.0)).collect(),
            grid.iter().map(|&x| 0.9 + 0.05 * hinge(x, -10.0)).collect(),
            grid.iter().map(|&x| -1.4 + 0.35 * hinge(x, -5.0)).collect(),
        ];
        let sep = min_separation(&shapes);
        let groups = (0..3)
            .map(|g| {
                let mut mixture = vec![0.0; 3];
                mixture[g] = 1.0;
                GroupSpec { subjects: subjects_per_group, replicates, mixture }
            })
            .collect();
        Self { grid, shapes, groups, noise_sd: noise_ratio * sep, replicate_sd: 0.0, balanced: true }
    }

    /// Two groups with the same mean curve: group A draws every replicate from
    /// shape S1, group B splits its replicates evenly between S0 and S2 where
    /// `(S0 + S2) / 2 = S1`.
    pub fn mean_confounded(subjects_per_group: usize, replicates: usize, noise_sd: f64) -> Self {
        let grid = day_grid();
        let s1: Vec<f64> = grid.iter().map(|&x| 0.4 * hinge(x, -4.0)).collect();
        let s0: Vec<f64> = grid.iter().zip(&s1).map(|(&x, m)| m - 0.8 + 0.2 * hinge(x, -10.0) / 6.0).collect();
        let s2: Vec<f64> = s1.iter().zip(&s0).map(|(m, lo)| 2.0 * m - lo).collect();
        Self {
            grid,
            shapes: vec![s0, s1, s2],
            groups: vec![
                GroupSpec { subjects: subjects_per_group, replicates, mixture: vec![0.0, 1.0, 0.0] },
                GroupSpec { subjects: subjects_per_group, replicates, mixture: vec![0.5, 0.0, 0.5] },
            ],
            noise_sd,
            replicate_sd: 0.0,
            balanced: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.groups.iter().all(|g| g.subjects == 0) {
            return Err(Error::invalid("generator needs at least one subject"));
        }
        if self.grid.is_empty() || self.shapes.is_empty() {
            return Err(Error::invalid("generator needs a grid and at least one shape"));
        }
        if self.shapes.iter().any(|s| s.len() != self.grid.len()) {
            return Err(Error::Dimension("every shape must have one value per grid point".into()));
        }
        if !(self.noise_sd >= 0.0 && self.replicate_sd >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        for g in &self.groups {
            if g.replicates == 0 {
                return Err(Error::invalid("each subject needs at least one replicate"));
            }
            if g.mixture.len() != self.shapes.len()
                || g.mixture.iter().any(|w| !(*w >= 0.0))
                || g.mixture.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::invalid("mixture weights must be non-negative, one per shape"));
            }
        }
        Ok(())
    }
}

fn balanced_counts(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let v = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if v < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Draws a dataset from `spec`; subjects are ordered group by group.
pub fn simulate_dataset<R: Rng + ?Sized>(rng: &mut R, spec: &GeneratorSpec) -> Result<(NestedDataset, SimulatedTruth)> {
    spec.validate()?;
    let total_subjects: usize = spec.groups.iter().map(|g| g.subjects).sum();
    let width = total_subjects.to_string().len();
    let mut subjects = Vec::with_capacity(total_subjects);
    let mut truth = SimulatedTruth { subject_labels: vec![], curve_labels: vec![] };
    for (g, group) in spec.groups.iter().enumerate() {
        for _ in 0..group.subjects {
            let shapes_for: Vec<usize> = if spec.balanced {
                let counts = balanced_counts(&group.mixture, group.replicates);
                let mut v: Vec<usize> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
                v.shuffle(rng);
                v
            } else {
                (0..group.replicates).map(|_| draw_index(rng, &group.mixture)).collect()
            };
            let replicates = shapes_for
                .iter()
                .enumerate()
                .map(|(j, &s)| {
                    let shift = spec.replicate_sd * std_normal(rng);
                    let y = spec.shapes[s].iter().map(|m| m + shift + spec.noise_sd * std_normal(rng)).collect();
                    Replicate { id: format!("r{}", j + 1), x: spec.grid.clone(), y }
                })
                .collect();
            subjects.push(Subject { id: format!("s{:0width$}", subjects.len() + 1), replicates });
            truth.subject_labels.push(g);
            truth.curve_labels.push(shapes_for);
        }
    }
    Ok((NestedDataset::new(subjects)?, truth))
}
