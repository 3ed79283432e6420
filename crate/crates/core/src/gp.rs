//! Gaussian-process posterior over a finite domain.
//!
//! The posterior keeps the observation history together with the mean vector
//! and the full posterior covariance over the domain. Conditioning on one more
//! observation is a rank-one update of both, so one-step lookahead variances
//! reduce to
//!
//! ```text
//! sigma^2_{t|x}(m) = sigma^2_t(m) - Cov_t(m, x)^2 / (sigma^2_t(x) + noise(x))
//! ```
//!
//! which is what the acquisition rules evaluate for every candidate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernel::Kernel;

/// Declared noise variances below this are clamped before factorization.
pub const NOISE_FLOOR: f64 = 1e-10;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// One noisy evaluation of the latent function at a domain index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub value: f64,
    /// Noise variance as declared by the caller (before flooring).
    pub noise_var: f64,
}

impl Observation {
    pub fn new(index: usize, value: f64, noise_var: f64) -> Self {
        Self {
            index,
            value,
            noise_var,
        }
    }
}

/// Cholesky factorization of a symmetric matrix, adding `1e-10, 1e-9, ...,
/// 1e-6` to the diagonal until it succeeds. Returns the factor and the jitter
/// that was needed (0 when none).
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut shifted = a.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            log::debug!("cholesky needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    let diag = a.diagonal();
    Err(Error::Factorization {
        jitter: JITTER_MAX,
        min_diag: diag.min(),
        max_diag: diag.max(),
    })
}

fn check_noise(noise_var: f64) -> Result<f64> {
    if !noise_var.is_finite() || noise_var < 0.0 {
        return Err(Error::Config(format!(
            "noise variance must be finite and non-negative, got {noise_var}"
        )));
    }
    Ok(noise_var.max(NOISE_FLOOR))
}

#[derive(Clone)]
pub struct GpPosterior {
    kernel: Kernel,
    domain: Arc<Domain>,
    history: Vec<Observation>,
    effective_noise: Vec<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl fmt::Debug for GpPosterior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GpPosterior")
            .field("kernel", &self.kernel)
            .field("domain_size", &self.domain.len())
            .field("observations", &self.history.len())
            .finish()
    }
}

impl GpPosterior {
    /// Zero-mean prior over the domain.
    pub fn prior(kernel: Kernel, domain: Arc<Domain>) -> Result<Self> {
        Self::fit(kernel, domain, &[])
    }

    /// Posterior after conditioning on `history` from scratch.
    pub fn fit(kernel: Kernel, domain: Arc<Domain>, history: &[Observation]) -> Result<Self> {
        kernel.validate()?;
        kernel.check_domain(&domain)?;
        let mut effective_noise = Vec::with_capacity(history.len());
        for obs in history {
            domain.check_index(obs.index)?;
            if !obs.value.is_finite() {
                return Err(Error::Numerical(format!(
                    "observation at index {} is not finite",
                    obs.index
                )));
            }
            effective_noise.push(check_noise(obs.noise_var)?);
        }

        let prior_cov = kernel.gram(&domain)?;
        let n = domain.len();
        let t = history.len();
        if t == 0 {
            return Ok(Self {
                kernel,
                domain,
                history: Vec::new(),
                effective_noise,
                mean: DVector::zeros(n),
                cov: prior_cov,
            });
        }

        let idx: Vec<usize> = history.iter().map(|o| o.index).collect();
        let mut gram_t = prior_cov.select_rows(&idx).select_columns(&idx);
        for (i, noise) in effective_noise.iter().enumerate() {
            gram_t[(i, i)] += noise;
        }
        let (chol, jitter) = cholesky_with_jitter(&gram_t)?;
        if jitter > 0.0 {
            effective_noise.iter_mut().for_each(|v| *v += jitter);
        }
        let factor = chol.unpack();

        let k_td = prior_cov.select_rows(&idx);
        let v = factor
            .solve_lower_triangular(&k_td)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let y = DVector::from_iterator(t, history.iter().map(|o| o.value));
        let w = factor
            .solve_lower_triangular(&y)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let mean = v.tr_mul(&w);
        let mut cov = prior_cov;
        cov.gemm_tr(-1.0, &v, &v, 1.0);

        Ok(Self {
            kernel,
            domain,
            history: history.to_vec(),
            effective_noise,
            mean,
            cov,
        })
    }

    /// Posterior with one more observation appended; equivalent to `fit` on
    /// the extended history.
    pub fn extend(mut self, index: usize, value: f64, noise_var: f64) -> Result<Self> {
        self.push(index, value, noise_var)?;
        Ok(self)
    }

    /// In-place version of [`extend`](Self::extend). Costs `O(|D|^2)`.
    pub fn push(&mut self, index: usize, value: f64, noise_var: f64) -> Result<()> {
        self.domain.check_index(index)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "observation at index {index} is not finite"
            )));
        }
        let eff = check_noise(noise_var)?;
        let n = self.domain.len();
        // predictive variance of y; equals the new Cholesky pivot of K_t + Sigma_t
        let s = self.cov[(index, index)].max(0.0) + eff;
        let c = DVector::from_column_slice(&self.cov.as_slice()[index * n..(index + 1) * n]);
        let resid = value - self.mean[index];
        self.mean.axpy(resid / s, &c, 1.0);
        self.cov.ger(-1.0 / s, &c, &c, 1.0);

        self.history.push(Observation::new(index, value, noise_var));
        self.effective_noise.push(eff);
        Ok(())
    }

    /// Condition on a pending observation whose value equals the current
    /// posterior mean: variances update, the mean does not.
    pub fn push_pending(&mut self, index: usize, noise_var: f64) -> Result<()> {
        self.domain.check_index(index)?;
        let value = self.mean[index];
        self.push(index, value, noise_var)
    }

    /// Posterior variances over `targets` if `index` were observed next with
    /// noise `noise_var`. Observation values do not enter.
    pub fn lookahead_variances(
        &self,
        index: usize,
        noise_var: f64,
        targets: &[usize],
    ) -> Result<Vec<f64>> {
        self.domain.check_index(index)?;
        let noise = check_noise(noise_var)?;
        let s = self.variance(index) + noise;
        if !(s > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive predictive variance {s:e} at index {index}"
            )));
        }
        let col = self.cov_column(index);
        targets
            .iter()
            .map(|&m| {
                self.domain.check_index(m)?;
                let c = col[m];
                Ok((self.cov[(m, m)] - c * c / s).max(0.0))
            })
            .collect()
    }

    /// Posterior variances over `targets` after observing every
    /// `(index, noise_var)` pair in `added` (duplicates allowed).
    pub fn batch_lookahead_variances(
        &self,
        added: &[(usize, f64)],
        targets: &[usize],
    ) -> Result<Vec<f64>> {
        for &m in targets {
            self.domain.check_index(m)?;
        }
        if added.is_empty() {
            return Ok(targets.iter().map(|&m| self.variance(m)).collect());
        }
        let idx: Vec<usize> = added.iter().map(|a| a.0).collect();
        for &i in &idx {
            self.domain.check_index(i)?;
        }
        let mut s = self.cov.select_rows(&idx).select_columns(&idx);
        for (k, &(_, noise)) in added.iter().enumerate() {
            s[(k, k)] += check_noise(noise)?;
        }
        let (chol, _) = cholesky_with_jitter(&s)?;
        let cross = self.cov.select_rows(&idx).select_columns(targets);
        let w = chol
            .l()
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok(targets
            .iter()
            .enumerate()
            .map(|(j, &m)| (self.cov[(m, m)] - w.column(j).norm_squared()).max(0.0))
            .collect())
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    /// Number of observations `t`.
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Noise variances actually used (floored, plus any jitter).
    pub fn effective_noise(&self) -> &[f64] {
        &self.effective_noise
    }

    /// Lower-triangular factor of `K_t + Sigma_t`, computed on demand.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        let t = self.history.len();
        if t == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let mut gram = DMatrix::zeros(t, t);
        for (i, a) in self.history.iter().enumerate() {
            for (j, b) in self.history.iter().enumerate().take(i + 1) {
                let k = self
                    .kernel
                    .eval_unchecked(self.domain.point(a.index), self.domain.point(b.index));
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
            gram[(i, i)] += self.effective_noise[i];
        }
        Ok(cholesky_with_jitter(&gram)?.0.unpack())
    }

    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn means(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Posterior variance, clamped at zero against round-off.
    #[inline]
    pub fn variance(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0)
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.domain.len()).map(|i| self.variance(i)).collect()
    }

    #[inline]
    pub fn std_dev(&self, i: usize) -> f64 {
        self.variance(i).sqrt()
    }

    #[inline]
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)]
    }

    /// Posterior covariances `Cov_t(., i)` over the whole domain.
    #[inline]
    pub fn cov_column(&self, i: usize) -> &[f64] {
        let n = self.domain.len();
        &self.cov.as_slice()[i * n..(i + 1) * n]
    }
}
