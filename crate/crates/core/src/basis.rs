//! Truncated power spline bases.
//!
//! Column 0 of every design matrix is the intercept; column `k >= 1` holds
//! `(x - knot_k)_+^degree`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: Vec<f64>,
    degree: u32,
}

impl SplineBasis {
    pub fn new(knots: Vec<f64>, degree: u32) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::invalid("a spline basis needs at least one knot"));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("knots must be strictly increasing"));
        }
        Ok(Self { knots, degree })
    }

    /// Equally spaced knots on `[lo, hi]`, both endpoints included.
    ///
    /// A single knot is placed at `lo`; `lo == hi` is accepted only when `p == 1`.
    pub fn equally_spaced(lo: f64, hi: f64, p: usize, degree: u32) -> Result<Self> {
        Self::new(make_knots(lo, hi, p)?, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Number of knots.
    pub fn num_knots(&self) -> usize {
        self.knots.len()
    }

    /// Number of design columns, intercept included.
    pub fn dim(&self) -> usize {
        self.knots.len() + 1
    }

    pub fn eval(&self, x: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, out.as_mut_slice());
        out
    }

    fn eval_into(&self, x: f64, out: &mut [f64]) {
        out[0] = 1.0;
        for (slot, &knot) in out[1..].iter_mut().zip(&self.knots) {
            *slot = hinge(x, knot, self.degree);
        }
    }

    pub fn design_matrix(&self, xs: &[f64]) -> DesignMatrix {
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        let mut row = vec![0.0; self.dim()];
        for (t, &x) in xs.iter().enumerate() {
            self.eval_into(x, &mut row);
            for (k, v) in row.iter().enumerate() {
                m[(t, k)] = *v;
            }
        }
        DesignMatrix(m)
    }
}

// 0^0 = 1 for the step basis (degree 0, x >= knot).
fn hinge(x: f64, knot: f64, degree: u32) -> f64 {
    if x < knot {
        0.0
    } else {
        (x - knot).powi(degree as i32)
    }
}

pub fn make_knots(lo: f64, hi: f64, p: usize) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("knot range must be finite"));
    }
    if p == 0 {
        return Err(Error::invalid("at least one knot is required"));
    }
    if p == 1 {
        if lo > hi {
            return Err(Error::invalid("knot range must satisfy lo <= hi"));
        }
        return Ok(vec![lo]);
    }
    if lo >= hi {
        return Err(Error::invalid("knot range must satisfy lo < hi"));
    }
    let step = (hi - lo) / (p - 1) as f64;
    Ok((0..p)
        .map(|k| if k == p - 1 { hi } else { lo + step * k as f64 })
        .collect())
}

/// Evaluation matrix of a basis at the covariate values of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(pub DMatrix<f64>);

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}
