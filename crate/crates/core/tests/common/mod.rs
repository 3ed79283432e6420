//! Dense reference computations shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use truvar::{Domain, Kernel};

/// Posterior mean and covariance from the closed form, solving with an LU
/// decomposition of `K_t + diag(noise)` rather than any incremental update.
pub struct Dense {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl Dense {
    pub fn var(&self, i: usize) -> f64 {
        self.cov[(i, i)]
    }
}

pub fn dense_posterior(kernel: &Kernel, domain: &Domain, history: &[(usize, f64, f64)]) -> Dense {
    let n = domain.len();
    let k = |i: usize, j: usize| kernel.eval(domain.point(i), domain.point(j)).unwrap();
    let prior = DMatrix::from_fn(n, n, k);
    if history.is_empty() {
        return Dense {
            mean: vec![0.0; n],
            cov: prior,
        };
    }
    let t = history.len();
    let a = DMatrix::from_fn(t, t, |p, q| {
        k(history[p].0, history[q].0) + if p == q { history[p].2.max(1e-10) } else { 0.0 }
    });
    let cross = DMatrix::from_fn(t, n, |p, j| k(history[p].0, j));
    let y = DVector::from_iterator(t, history.iter().map(|h| h.1));
    let lu = a.lu();
    let alpha = lu.solve(&y).expect("invertible");
    let w = lu.solve(&cross).expect("invertible");
    let mean = (cross.transpose() * alpha).iter().copied().collect();
    let cov = prior - cross.transpose() * w;
    Dense { mean, cov }
}

/// Variances after appending `added` (index, noise) pairs with dummy values.
pub fn dense_variances_after(
    kernel: &Kernel,
    domain: &Domain,
    history: &[(usize, f64, f64)],
    added: &[(usize, f64)],
) -> Vec<f64> {
    let mut all = history.to_vec();
    all.extend(added.iter().map(|&(i, v)| (i, 0.0, v)));
    let d = dense_posterior(kernel, domain, &all);
    (0..domain.len()).map(|i| d.var(i)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Random instance: domain of `n` points in `[0,1]^dim`, SE or Matern
/// kernel, and a history with mixed noise levels.
pub struct Instance {
    pub kernel: Kernel,
    pub domain: Arc<Domain>,
    pub history: Vec<(usize, f64, f64)>,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_points: usize, max_history: usize) -> Instance {
    let dim = rng.random_range(1..=3);
    let n = rng.random_range(2..=max_points);
    let coords: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let domain = Arc::new(Domain::new(dim, coords).unwrap());
    let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..1.0)).collect();
    let kernel = if rng.random::<bool>() {
        Kernel::new(truvar::KernelFamily::SquaredExponential, scales, 1.0).unwrap()
    } else {
        Kernel::matern52(scales).unwrap()
    };
    let t = rng.random_range(0..=max_history);
    let history = (0..t)
        .map(|_| {
            (
                rng.random_range(0..n),
                rng.random_range(-2.0..2.0),
                log_uniform(rng, 1e-6, 0.1),
            )
        })
        .collect();
    Instance {
        kernel,
        domain,
        history,
    }
}
