//! Stationary covariance functions.
//!
//! Both families use per-dimension length scales `l_k` through the scaled
//! distance `r^2 = sum_k ((x_k - x'_k) / l_k)^2`; an isotropic kernel simply
//! repeats one length scale.
//!
//! * squared exponential: `v * exp(-r^2 / 2)`
//! * Matern-5/2: `v * (1 + sqrt(5) r + 5 r^2 / 3) * exp(-sqrt(5) r)`

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernel {
    pub family: KernelFamily,
    pub length_scales: Vec<f64>,
    #[serde(default = "unit_variance")]
    pub variance: f64,
}

fn unit_variance() -> f64 {
    1.0
}

impl Kernel {
    pub fn new(family: KernelFamily, length_scales: Vec<f64>, variance: f64) -> Result<Self> {
        let kernel = Self {
            family,
            length_scales,
            variance,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Isotropic squared exponential with unit variance.
    pub fn squared_exponential(length_scale: f64, dim: usize) -> Result<Self> {
        Self::new(
            KernelFamily::SquaredExponential,
            vec![length_scale; dim],
            1.0,
        )
    }

    /// Matern-5/2 with one length scale per input dimension and unit variance.
    pub fn matern52(length_scales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Matern52, length_scales, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.is_empty() {
            return Err(Error::Config("kernel needs at least one length scale".into()));
        }
        if self
            .length_scales
            .iter()
            .any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(Error::Config("kernel length scales must be positive".into()));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::Config("kernel variance must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for p in [x, y] {
            if p.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: p.len(),
                });
            }
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(y)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum();
        self.from_scaled_sq_dist(r2)
    }

    #[inline]
    fn from_scaled_sq_dist(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => self.variance * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                self.variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
        }
    }

    pub fn check_domain(&self, domain: &Domain) -> Result<()> {
        if domain.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: domain.dim(),
            });
        }
        Ok(())
    }

    /// Gram matrix over every pair of domain points.
    pub fn gram(&self, domain: &Domain) -> Result<DMatrix<f64>> {
        self.check_domain(domain)?;
        let n = domain.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            let pj = domain.point(j);
            k[(j, j)] = self.variance;
            for i in (j + 1)..n {
                let v = self.eval_unchecked(domain.point(i), pj);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-covariance between two point sets (rows from `a`, columns from `b`).
    pub fn cross(&self, a: &Domain, b: &Domain) -> Result<DMatrix<f64>> {
        self.check_domain(a)?;
        self.check_domain(b)?;
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval_unchecked(a.point(i), b.point(j))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn se_self_covariance_is_one() {
        let k = Kernel::squared_exponential(0.3, 2).unwrap();
        assert_eq!(k.eval(&[0.4, -1.0], &[0.4, -1.0]).unwrap(), 1.0);
    }

    #[test]
    fn se_at_one_length_scale() {
        let k = Kernel::squared_exponential(0.1, 1).unwrap();
        assert_abs_diff_eq!(k.eval(&[0.2], &[0.3]).unwrap(), 0.606531, epsilon = 1e-6);
        assert_abs_diff_eq!(
            k.eval(&[0.0], &[0.1]).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn matern_ard_matches_scalar_formula() {
        let k = Kernel::matern52(vec![1.0, 2.0]).unwrap();
        // scaled distance is sqrt(1 + 1) = sqrt(2)
        let r = 2f64.sqrt();
        let expected = (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp();
        assert_abs_diff_eq!(
            k.eval(&[0.0, 0.0], &[1.0, 2.0]).unwrap(),
            expected,
            epsilon = 1e-14
        );
        assert_eq!(k.eval(&[3.0, 1.0], &[3.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let k = Kernel::squared_exponential(0.1, 2).unwrap();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(Kernel::squared_exponential(0.0, 1).is_err());
        assert!(Kernel::new(KernelFamily::Matern52, vec![1.0], -1.0).is_err());
    }

    #[test]
    fn gram_is_symmetric_with_unit_diagonal() {
        let d = Domain::unit_grid(4, 2).unwrap();
        for k in [
            Kernel::squared_exponential(0.3, 2).unwrap(),
            Kernel::matern52(vec![0.2, 0.5]).unwrap(),
        ] {
            let g = k.gram(&d).unwrap();
            for i in 0..d.len() {
                assert_eq!(g[(i, i)], 1.0);
                for j in 0..d.len() {
                    assert_eq!(g[(i, j)], g[(j, i)]);
                }
            }
        }
    }
}
