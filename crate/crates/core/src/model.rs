//! Shared data model: nested datasets, mixture atoms, hyperparameters and
//! the Gaussian likelihoods used by both samplers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::basis::{DesignMatrix, SplineBasis};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, jitter, log_det, spd_inverse, symmetrize};

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub id: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub replicates: Vec<Replicate>,
}

/// Subjects, each with one or more replicate curves observed at their own
/// covariate values.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedDataset {
    subjects: Vec<Subject>,
}

impl NestedDataset {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::invalid("dataset has no subjects"));
        }
        for s in &subjects {
            if s.replicates.is_empty() {
                return Err(Error::invalid(format!("subject {} has no replicates", s.id)));
            }
            for r in &s.replicates {
                if r.x.is_empty() || r.x.len() != r.y.len() {
                    return Err(Error::invalid(format!(
                        "subject {} replicate {}: need matching, non-empty x and y",
                        s.id, r.id
                    )));
                }
                if r.x.iter().chain(&r.y).any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!(
                        "subject {} replicate {}: non-finite value",
                        s.id, r.id
                    )));
                }
            }
        }
        Ok(Self { subjects })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn num_replicates(&self) -> usize {
        self.subjects.iter().map(|s| s.replicates.len()).sum()
    }

    pub fn num_observations(&self) -> usize {
        self.replicates().map(|r| r.x.len()).sum()
    }

    pub fn replicates(&self) -> impl Iterator<Item = &Replicate> {
        self.subjects.iter().flat_map(|s| s.replicates.iter())
    }

    /// Overwrite the responses of one replicate, keeping its design.
    pub fn set_responses(&mut self, subject: usize, replicate: usize, y: Vec<f64>) -> Result<()> {
        let r = &mut self.subjects[subject].replicates[replicate];
        if y.len() != r.x.len() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("replacement responses must be finite and match x"));
        }
        r.y = y;
        Ok(())
    }

    /// Smallest and largest covariate value.
    pub fn x_range(&self) -> (f64, f64) {
        self.replicates()
            .flat_map(|r| r.x.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    }
}

/// One mixture component `(theta, sigma2, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAtom {
    pub theta: DVector<f64>,
    pub sigma2: f64,
    /// Inclusion indicators; entry 0 (intercept) is always `true`.
    pub lambda: Vec<bool>,
}

impl ClusterAtom {
    pub fn new(theta: DVector<f64>, sigma2: f64, lambda: Vec<bool>) -> Result<Self> {
        if theta.len() != lambda.len() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, lambda {}",
                theta.len(),
                lambda.len()
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!("atom variance must be positive, got {sigma2}")));
        }
        if !lambda.first().copied().unwrap_or(false) {
            return Err(Error::invalid("intercept inclusion indicator must be set"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("atom coefficients must be finite"));
        }
        Ok(Self { theta, sigma2, lambda })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `Lambda theta`.
    pub fn effective(&self) -> DVector<f64> {
        DVector::from_fn(self.theta.len(), |k, _| if self.lambda[k] { self.theta[k] } else { 0.0 })
    }

    pub fn curve(&self, x: &DesignMatrix) -> DVector<f64> {
        x.matrix() * self.effective()
    }
}

/// Gamma prior with shape/rate parameterisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Inverse-Gamma shape of the atom variances.
    pub nu1: f64,
    /// Inverse-Gamma scale of the atom variances (initial value when it is
    /// learned by the nested sampler).
    pub nu2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub nu_omega: f64,
    pub omega0: DMatrix<f64>,
    pub nu_sigma: f64,
    pub sigma0: DMatrix<f64>,
    pub a: GammaPrior,
    pub b: GammaPrior,
    pub a1: GammaPrior,
    pub b1: GammaPrior,
    pub a2: GammaPrior,
    pub b2: GammaPrior,
    /// Gamma hyperprior `(rho, psi)` on `nu2` in the nested model.
    pub rho: f64,
    pub psi: f64,
}

impl Hyperparams {
    /// Default prior settings for basis dimension `dim = p + 1` with both
    /// inverse-Wishart scales set to `scale`.
    pub fn with_scale(scale: DMatrix<f64>) -> Self {
        let dim = scale.nrows();
        let conc = GammaPrior::new(3.0, 3.0);
        Self {
            nu1: 2.0,
            nu2: 0.04,
            eta1: 2.0,
            eta2: 4.0,
            nu_omega: dim as f64 + 2.0,
            omega0: scale.clone(),
            nu_sigma: dim as f64 + 2.0,
            sigma0: scale,
            a: conc,
            b: conc,
            a1: conc,
            b1: conc,
            a2: conc,
            b2: conc,
            rho: 2.0,
            psi: 50.0,
        }
    }

    /// Defaults with unit-information inverse-Wishart scales: the prior mean
    /// of `Omega` and `Sigma` is the inverse of the per-observation Gram
    /// matrix returned by [`unit_information_scale`].
    pub fn unit_information(data: &NestedDataset, basis: &SplineBasis) -> Result<Self> {
        let info = unit_information_scale(data, basis);
        let mut scale = spd_inverse(&info, "unit-information scale")?;
        symmetrize(&mut scale);
        Ok(Self::with_scale(scale))
    }

    pub fn dim(&self) -> usize {
        self.omega0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.nu1, self.nu2, self.eta1, self.eta2, self.rho, self.psi];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("nu1, nu2, eta1, eta2, rho and psi must be positive"));
        }
        for g in [self.a, self.b, self.a1, self.b1, self.a2, self.b2] {
            if !(g.shape > 0.0 && g.rate > 0.0) {
                return Err(Error::invalid("Gamma hyperpriors need positive shape and rate"));
            }
        }
        let d = self.dim();
        if self.sigma0.nrows() != d || !self.omega0.is_square() || !self.sigma0.is_square() {
            return Err(Error::Dimension("Omega0 and Sigma0 must be square of equal size".into()));
        }
        if self.nu_omega <= d as f64 - 1.0 || self.nu_sigma <= d as f64 - 1.0 {
            return Err(Error::invalid("inverse-Wishart degrees of freedom must exceed dim - 1"));
        }
        cholesky(&self.omega0, "Omega0")?;
        cholesky(&self.sigma0, "Sigma0")?;
        Ok(())
    }
}

/// `ln N(y | X Lambda theta, sigma2 I)`.
pub fn loglik_curve(y: &[f64], x: &DesignMatrix, atom: &ClusterAtom) -> Result<f64> {
    if y.len() != x.rows() || x.cols() != atom.dim() {
        return Err(Error::Dimension(format!(
            "y has {} points, design is {}x{}, atom has {} coefficients",
            y.len(),
            x.rows(),
            x.cols(),
            atom.dim()
        )));
    }
    if !(atom.sigma2 > 0.0) {
        return Err(Error::invalid("atom variance must be positive"));
    }
    let mu = atom.curve(x);
    let rss: f64 = y.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let t = y.len() as f64;
    Ok(-0.5 * t * (2.0 * PI * atom.sigma2).ln() - 0.5 * rss / atom.sigma2)
}

/// Log-likelihood of all replicates of one subject with the replicate-level
/// coefficients integrated out: each replicate is
/// `N(B Lambda theta, sigma2 (I + B Sigma B'))`.
pub fn marginal_loglik_subject(
    subject: &Subject,
    basis: &SplineBasis,
    atom: &ClusterAtom,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    if sigma.nrows() != basis.dim() || sigma.ncols() != basis.dim() || atom.dim() != basis.dim() {
        return Err(Error::Dimension("Sigma and atom must match the basis dimension".into()));
    }
    let beta = atom.effective();
    let mut total = 0.0;
    for r in &subject.replicates {
        let b = basis.design_matrix(&r.x);
        let t = r.x.len();
        let mut cov = b.matrix() * sigma * b.matrix().transpose();
        for i in 0..t {
            cov[(i, i)] += 1.0;
        }
        cov *= atom.sigma2;
        let chol = cholesky(&cov, &format!("marginal covariance of replicate {}", r.id))?;
        let resid = DVector::from_column_slice(&r.y) - b.matrix() * &beta;
        let sol = chol.solve(&resid);
        total += -0.5 * (t as f64 * (2.0 * PI).ln() + log_det(&chol) + resid.dot(&sol));
    }
    Ok(total)
}

/// Per-observation Gram matrix `sum_ij B_ij' B_ij / N`, jittered to be SPD.
pub fn unit_information_scale(data: &NestedDataset, basis: &SplineBasis) -> DMatrix<f64> {
    let d = basis.dim();
    let mut gram = DMatrix::zeros(d, d);
    for r in data.replicates() {
        let b = basis.design_matrix(&r.x);
        gram += b.matrix().transpose() * b.matrix();
    }
    gram /= data.num_observations() as f64;
    symmetrize(&mut gram);
    jitter(&mut gram);
    gram
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{seeded, std_normal};
    use crate::linalg::is_spd;

    fn basis() -> SplineBasis {
        SplineBasis::equally_spaced(0.0, 4.0, 3, 1).unwrap()
    }

    fn subject(xs: &[&[f64]], ys: &[&[f64]]) -> Subject {
        Subject {
            id: "s".into(),
            replicates: xs
                .iter()
                .zip(ys)
                .enumerate()
                .map(|(j, (x, y))| Replicate { id: format!("r{j}"), x: x.to_vec(), y: y.to_vec() })
                .collect(),
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(NestedDataset::new(vec![]).is_err());
        let bad = subject(&[&[0.0, 1.0]], &[&[1.0]]);
        assert!(NestedDataset::new(vec![bad]).is_err());
        let nan = subject(&[&[0.0]], &[&[f64::NAN]]);
        assert!(NestedDataset::new(vec![nan]).is_err());
        let ok = subject(&[&[0.0, 1.0], &[2.0]], &[&[1.0, 2.0], &[0.5]]);
        let d = NestedDataset::new(vec![ok]).unwrap();
        assert_eq!((d.num_subjects(), d.num_replicates(), d.num_observations()), (1, 2, 3));
        assert_eq!(d.x_range(), (0.0, 2.0));
    }

    #[test]
    fn atom_validation() {
        let th = DVector::from_vec(vec![1.0, 2.0]);
        assert!(ClusterAtom::new(th.clone(), 0.0, vec![true, true]).is_err());
        assert!(ClusterAtom::new(th.clone(), 1.0, vec![false, true]).is_err());
        assert!(ClusterAtom::new(th.clone(), 1.0, vec![true]).is_err());
        let a = ClusterAtom::new(th, 1.0, vec![true, false]).unwrap();
        assert_eq!(a.effective().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn exact_fit_at_unit_density_variance() {
        let b = basis();
        let x = b.design_matrix(&[0.5, 1.0, 3.0, 4.0]);
        let atom = ClusterAtom::new(
            DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]),
            1.0 / (2.0 * PI),
            vec![true, true, false, true],
        )
        .unwrap();
        let y: Vec<f64> = atom.curve(&x).iter().copied().collect();
        assert!(loglik_curve(&y, &x, &atom).unwrap().abs() < 1e-13);
    }

    #[test]
    fn zero_curve_depends_only_on_variance() {
        let b = basis();
        let x = b.design_matrix(&[0.5, 1.0, 3.0]);
        let atom = ClusterAtom::new(DVector::from_vec(vec![0.0, 5.0, 5.0, 5.0]), 0.3, vec![true, false, false, false])
            .unwrap();
        let ll = loglik_curve(&[0.0, 0.0, 0.0], &x, &atom).unwrap();
        assert!((ll - (-1.5 * (2.0 * PI * 0.3).ln())).abs() < 1e-13);
        assert!(loglik_curve(&[0.0, 0.0], &x, &atom).is_err());
    }

    #[test]
    fn loglik_matches_scalar_loop() {
        let b = basis();
        let mut rng = seeded(21);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..6).map(|_| 5.0 * rand::Rng::random::<f64>(&mut rng)).collect();
            let ys: Vec<f64> = (0..6).map(|_| std_normal(&mut rng)).collect();
            let theta = DVector::from_fn(4, |_, _| std_normal(&mut rng));
            let lambda = vec![true, rand::Rng::random(&mut rng), rand::Rng::random(&mut rng), true];
            let atom = ClusterAtom::new(theta.clone(), 0.2 + rand::Rng::random::<f64>(&mut rng), lambda.clone())
                .unwrap();
            let mut naive = 0.0;
            for (&x, &y) in xs.iter().zip(&ys) {
                let mut mu = 0.0;
                for k in 0..4 {
                    let bk = if k == 0 { 1.0 } else { (x - b.knots()[k - 1]).max(0.0) };
                    if lambda[k] {
                        mu += bk * theta[k];
                    }
                }
                naive += -0.5 * (2.0 * PI * atom.sigma2).ln() - (y - mu) * (y - mu) / (2.0 * atom.sigma2);
            }
            let ll = loglik_curve(&ys, &b.design_matrix(&xs), &atom).unwrap();
            assert!((ll - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_collapses_to_conditional_when_sigma_vanishes() {
        let b = basis();
        let s = subject(&[&[0.0, 1.0, 2.5], &[1.5, 3.5]], &[&[0.1, 0.4, 1.2], &[0.2, -0.3]]);
        let atom = ClusterAtom::new(DVector::from_vec(vec![0.2, 0.3, -0.1, 0.4]), 0.5, vec![true, true, true, false])
            .unwrap();
        let sigma = DMatrix::identity(4, 4) * 1e-10;
        let m = marginal_loglik_subject(&s, &b, &atom, &sigma).unwrap();
        let c: f64 = s
            .replicates
            .iter()
            .map(|r| loglik_curve(&r.y, &b.design_matrix(&r.x), &atom).unwrap())
            .sum();
        assert!((m - c).abs() < 1e-6);
    }

    #[test]
    fn marginal_single_point_scalar_formula() {
        let b = basis();
        let s = subject(&[&[2.5]], &[&[0.7]]);
        let sigma = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.1, 0.0, 0.2, //
            0.1, 0.5, 0.1, 0.0, //
            0.0, 0.1, 0.8, 0.1, //
            0.2, 0.0, 0.1, 0.3,
        ]);
        let atom = ClusterAtom::new(DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]), 0.25, vec![true, true, false, true])
            .unwrap();
        let bx = b.eval(2.5);
        let mean = 0.1 + 0.2 * bx[1] + 0.4 * bx[3];
        let var = 0.25 * (1.0 + bx.dot(&(&sigma * &bx)));
        let want = -0.5 * (2.0 * PI * var).ln() - (0.7 - mean) * (0.7 - mean) / (2.0 * var);
        let got = marginal_loglik_subject(&s, &b, &atom, &sigma).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn marginal_rejects_indefinite_sigma() {
        let b = basis();
        let s = subject(&[&[1.0, 2.0, 3.0]], &[&[0.0, 0.0, 0.0]]);
        let atom = ClusterAtom::new(DVector::zeros(4), 1.0, vec![true; 4]).unwrap();
        let sigma = DMatrix::identity(4, 4) * -5.0;
        assert!(matches!(
            marginal_loglik_subject(&s, &b, &atom, &sigma),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn unit_information_cases() {
        // One replicate whose design has orthonormal columns: B'B = I, N = 4.
        let b = SplineBasis::new(vec![10.0], 1).unwrap();
        let s = subject(&[&[0.0, 0.0, 0.0, 0.0]], &[&[0.0; 4]]);
        let d = NestedDataset::new(vec![s]).unwrap();
        let m = unit_information_scale(&d, &b);
        // Intercept column has squared norm 4 -> 1 after scaling; the hinge is
        // identically zero and only receives jitter.
        assert!((m[(0, 0)] - 1.0).abs() < 1e-7);
        assert!(m[(1, 1)] > 0.0 && m[(1, 1)] < 1e-7);

        let b = basis();
        let s1 = subject(&[&[0.0, 1.0, 3.0], &[2.0, 4.0]], &[&[0.0; 3], &[0.0; 2]]);
        let d1 = NestedDataset::new(vec![s1.clone()]).unwrap();
        let d2 = NestedDataset::new(vec![s1.clone(), s1]).unwrap();
        let m1 = unit_information_scale(&d1, &b);
        let m2 = unit_information_scale(&d2, &b);
        assert!((&m1 - &m2).amax() < 1e-12);

        // Hand-assembled Gram sum.
        let mut gram = DMatrix::zeros(4, 4);
        for x in [0.0, 1.0, 3.0, 2.0, 4.0] {
            let row = b.eval(x);
            gram += &row * row.transpose();
        }
        gram /= 5.0;
        let eps = 1e-8 * gram.trace() / 4.0;
        for i in 0..4 {
            gram[(i, i)] += eps;
        }
        assert!((&m1 - &gram).amax() < 1e-12);
        assert!((&m1 - m1.transpose()).amax() <= 1e-12);
        assert!(is_spd(&m1));
    }
}
