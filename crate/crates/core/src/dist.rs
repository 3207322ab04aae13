//! Random variate generation and log densities used by the samplers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::Result;
use crate::linalg::{cholesky, log_det, symmetrize};

/// Deterministic, portable generator used for every chain and simulation.
pub type ChainRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChainRng {
    use rand::SeedableRng;
    ChainRng::seed_from_u64(seed)
}

/// SplitMix64 step; derives independent sub-seeds from a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform on the open interval (0, 1].
pub fn uniform_pos<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Log of a Gamma(shape, 1) variate; stays finite for tiny shapes.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.max(f64::MIN_POSITIVE).ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.max(f64::MIN_POSITIVE).ln() + uniform_pos(rng).ln() / shape
    }
}

/// Gamma variate with shape/rate parameterisation.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp() / rate
}

pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    scale / ln_gamma_variate(rng, shape).exp().max(f64::MIN_POSITIVE)
}

/// Largest representable value strictly below one, and the clamp floor for
/// stick fractions.
pub const STICK_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
pub const STICK_MIN: f64 = f64::MIN_POSITIVE;

/// Beta variate via two log-Gamma draws, clamped to `[STICK_MIN, STICK_MAX]`.
pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let lx = ln_gamma_variate(rng, a);
    let ly = ln_gamma_variate(rng, b);
    let u = 1.0 / (1.0 + (ly - lx).exp());
    u.clamp(STICK_MIN, STICK_MAX)
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn ln_beta_pdf(u: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * u.ln() + (b - 1.0) * (-u).ln_1p() - ln_beta_fn(a, b)
}

/// Gamma density, shape/rate.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn ln_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// Multivariate log-Gamma function.
pub fn ln_mv_gamma(d: usize, a: f64) -> f64 {
    let d_f = d as f64;
    0.25 * d_f * (d_f - 1.0) * PI.ln() + (0..d).map(|j| ln_gamma(a - 0.5 * j as f64)).sum::<f64>()
}

/// Inverse-Wishart density with `E[X] = scale / (dof - d - 1)`.
pub fn ln_inv_wishart_pdf(x: &DMatrix<f64>, dof: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let d = x.nrows();
    let cx = cholesky(x, "inverse-Wishart argument")?;
    let cs = cholesky(scale, "inverse-Wishart scale")?;
    let tr = (cx.inverse() * scale).trace();
    Ok(0.5 * dof * log_det(&cs)
        - 0.5 * dof * d as f64 * 2f64.ln()
        - ln_mv_gamma(d, 0.5 * dof)
        - 0.5 * (dof + d as f64 + 1.0) * log_det(&cx)
        - 0.5 * tr)
}

/// `N(0, cov)` log density evaluated at `x`.
pub fn ln_mvn_zero_mean(x: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky(cov, "normal covariance")?;
    let sol = c.solve(x);
    Ok(-0.5 * (x.len() as f64 * (2.0 * PI).ln() + log_det(&c) + x.dot(&sol)))
}

/// Draw from `N(P^{-1} h, scale * P^{-1})` given a Cholesky factor of `P`.
pub fn mvn_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    chol_p: &crate::linalg::Chol,
    h: &DVector<f64>,
    scale: f64,
) -> DVector<f64> {
    let mean = chol_p.solve(h);
    let z = DVector::from_fn(h.len(), |_, _| std_normal(rng) * scale.sqrt());
    // L^T e = z gives e ~ N(0, P^{-1}).
    let e = chol_p
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + e
}

/// Draw from `N(0, cov)`.
pub fn mvn_zero_mean<R: Rng + ?Sized>(rng: &mut R, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let c = cholesky(cov, "normal covariance")?;
    let z = DVector::from_fn(cov.nrows(), |_, _| std_normal(rng));
    Ok(c.l() * z)
}

/// Inverse-Wishart draw with `E[X] = scale / (dof - d - 1)`.
///
/// With `scale = U U'` and a Bartlett factor `A` of a standard Wishart draw,
/// `X = (U A^{-T})(U A^{-T})'`.
pub fn inv_wishart<R: Rng + ?Sized>(rng: &mut R, dof: f64, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    let u = cholesky(scale, "inverse-Wishart scale")?.l();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = (2.0 * gamma(rng, 0.5 * (dof - i as f64), 1.0)).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    // M' = A^{-1} U'
    let ainv_ut = a
        .solve_lower_triangular(&u.transpose())
        .ok_or_else(|| crate::error::Error::Numerical("singular Bartlett factor".into()))?;
    let m = ainv_ut.transpose();
    let mut x = &m * m.transpose();
    symmetrize(&mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn beta_moments() {
        let mut rng = seeded(7);
        for &(a, b) in &[(2.0, 4.0), (0.3, 0.7), (1.0, 1.0)] {
            let xs: Vec<f64> = (0..100_000).map(|_| beta(&mut rng, a, b)).collect();
            let (m, _) = mean_var(&xs);
            let true_m = a / (a + b);
            let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
            assert!((m - true_m).abs() < 4.0 * sd / (xs.len() as f64).sqrt(), "{a} {b} {m}");
        }
    }

    #[test]
    fn beta_with_tiny_shape_stays_in_range() {
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let u = beta(&mut rng, 2.0, 1e-6);
            assert!(u > 0.0 && u < 1.0);
            let v = beta(&mut rng, 1e-6, 1e-6);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn gamma_and_inv_gamma_moments() {
        let mut rng = seeded(3);
        let xs: Vec<f64> = (0..100_000).map(|_| gamma(&mut rng, 3.0, 3.0)).collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 1.0).abs() < 0.01);
        assert!((v - 1.0 / 3.0).abs() < 0.01);
        let ys: Vec<f64> = (0..100_000).map(|_| inv_gamma(&mut rng, 6.0, 0.2)).collect();
        let (m, _) = mean_var(&ys);
        assert!((m - 0.04).abs() < 0.0005);
        let zs: Vec<f64> = (0..100_000).map(|_| gamma(&mut rng, 0.4, 2.0)).collect();
        let (m, _) = mean_var(&zs);
        assert!((m - 0.2).abs() < 0.005);
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = seeded(11);
        let scale = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.5]);
        let dof = 10.0;
        let n = 40_000;
        let mut acc = DMatrix::zeros(3, 3);
        for _ in 0..n {
            acc += inv_wishart(&mut rng, dof, &scale).unwrap();
        }
        acc /= n as f64;
        let want = &scale / (dof - 3.0 - 1.0);
        assert!((acc - &want).amax() < 0.01, "{want}");
    }

    #[test]
    fn precision_parameterised_normal() {
        let mut rng = seeded(5);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = DVector::from_vec(vec![1.0, -1.0]);
        let c = cholesky(&p, "p").unwrap();
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| mvn_from_precision(&mut rng, &c, &h, 0.5)).collect();
        let mean = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / n as f64;
        let want_mean = c.solve(&h);
        assert!((mean.clone() - want_mean).amax() < 0.01);
        let mut cov = DMatrix::zeros(2, 2);
        for d in &draws {
            let e = d - &mean;
            cov += &e * e.transpose();
        }
        cov /= (n - 1) as f64;
        let want_cov = c.inverse() * 0.5;
        assert!((cov - want_cov).amax() < 0.01);
    }

    #[test]
    fn densities_integrate_sensibly() {
        // Beta(1,1) is flat, Gamma(1, r) is exponential.
        assert!(ln_beta_pdf(0.3, 1.0, 1.0).abs() < 1e-14);
        assert!((ln_gamma_pdf(2.0, 1.0, 0.5) - (0.5f64.ln() - 1.0)).abs() < 1e-14);
        let x = DMatrix::identity(2, 2) * 2.0;
        // One-dimensional inverse-Wishart reduces to an inverse-Gamma.
        let x1 = DMatrix::from_element(1, 1, 0.7);
        let s1 = DMatrix::from_element(1, 1, 1.3);
        let iw = ln_inv_wishart_pdf(&x1, 5.0, &s1).unwrap();
        assert!((iw - ln_inv_gamma_pdf(0.7, 2.5, 0.65)).abs() < 1e-12);
        assert!(ln_inv_wishart_pdf(&x, 6.0, &x).unwrap().is_finite());
    }
}
