mod common;

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use common::{dense_posterior, dense_variances_after, random_instance, rng};
use proptest::prelude::*;
use rand::Rng;
use truvar::gp::Observation;
use truvar::sets::confidence_bounds;
use truvar::{Domain, GpPosterior, Kernel, KernelFamily};

fn observations(history: &[(usize, f64, f64)]) -> Vec<Observation> {
    history.iter().map(|&(i, y, v)| Observation::new(i, y, v)).collect()
}

fn line(n: usize) -> Arc<Domain> {
    Arc::new(Domain::unit_grid(n, 1).unwrap())
}

#[test]
fn kernel_reference_values() {
    let se = Kernel::squared_exponential(0.1, 2).unwrap();
    assert_eq!(se.eval(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
    assert_abs_diff_eq!(se.eval(&[0.0, 0.0], &[0.06, 0.08]).unwrap(), (-0.5f64).exp(), epsilon = 1e-12);
    assert_abs_diff_eq!(se.eval(&[0.0, 0.0], &[0.06, 0.08]).unwrap(), 0.606531, epsilon = 1e-6);

    let m = Kernel::matern52(vec![1.0, 2.0]).unwrap();
    let r = 2f64.sqrt();
    let s5 = 5f64.sqrt();
    let expected = (1.0 + s5 * r + 5.0 * r * r / 3.0) * (-s5 * r).exp();
    assert_abs_diff_eq!(m.eval(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), expected, epsilon = 1e-14);
    assert_eq!(m.eval(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), m.eval(&[1.0, 2.0], &[0.0, 0.0]).unwrap());
    assert!(se.eval(&[0.0], &[0.0, 1.0]).is_err());
}

#[test]
fn scaled_kernel_keeps_variance_on_diagonal() {
    let k = Kernel::new(KernelFamily::Matern52, vec![0.3], 2.5).unwrap();
    assert_eq!(k.eval(&[0.4], &[0.4]).unwrap(), 2.5);
    let gp = GpPosterior::prior(k, line(4)).unwrap();
    assert!(gp.variances().iter().all(|&v| v == 2.5));
}

#[test]
fn empty_history_is_the_prior() {
    let gp = GpPosterior::fit(Kernel::squared_exponential(0.2, 1).unwrap(), line(5), &[]).unwrap();
    assert!(gp.means().iter().all(|&m| m == 0.0));
    assert!(gp.variances().iter().all(|&v| v == 1.0));
    let (lo, up) = confidence_bounds(&gp, 4.0);
    for (l, u) in lo.iter().zip(&up) {
        assert_eq!(*l, -2.0);
        assert_eq!(*u, 2.0);
    }
}

#[test]
fn single_observation_closed_form() {
    for &noise in &[1e-6, 0.01, 0.5, 2.0] {
        let gp = GpPosterior::fit(
            Kernel::squared_exponential(0.2, 1).unwrap(),
            line(5),
            &[Observation::new(2, 1.7, noise)],
        )
        .unwrap();
        assert_abs_diff_eq!(gp.mean(2), 1.7 / (1.0 + noise), epsilon = 1e-12);
        assert_abs_diff_eq!(gp.variance(2), noise / (1.0 + noise), epsilon = 1e-12);
    }
}

#[test]
fn five_random_points_match_dense_solve() {
    let mut r = rng(5);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 30, 5);
        let gp = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
        let oracle = dense_posterior(&inst.kernel, &inst.domain, &inst.history);
        for i in 0..inst.domain.len() {
            assert_abs_diff_eq!(gp.mean(i), oracle.mean[i], epsilon = 1e-8);
            assert_abs_diff_eq!(gp.variance(i), oracle.var(i), epsilon = 1e-8);
        }
    }
}

#[test]
fn extend_matches_fit_on_concatenated_history() {
    let mut r = rng(11);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 25, 12);
        let mut gp = GpPosterior::prior(inst.kernel.clone(), inst.domain.clone()).unwrap();
        for &(i, y, v) in &inst.history {
            gp = gp.extend(i, y, v).unwrap();
        }
        let fitted = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
        for i in 0..inst.domain.len() {
            assert_abs_diff_eq!(gp.mean(i), fitted.mean(i), epsilon = 1e-8);
            for j in 0..inst.domain.len() {
                assert_abs_diff_eq!(gp.covariance(i, j), fitted.covariance(i, j), epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn repeated_measurement_keeps_shrinking_variance() {
    let k = Kernel::squared_exponential(0.3, 1).unwrap();
    let d = line(4);
    let mut gp = GpPosterior::prior(k.clone(), d.clone()).unwrap();
    let mut history = Vec::new();
    let mut last = gp.variance(1);
    for _ in 0..6 {
        gp = gp.extend(1, 0.4, 0.05).unwrap();
        history.push((1, 0.4, 0.05));
        assert!(gp.variance(1) < last);
        assert_abs_diff_eq!(gp.variance(1), dense_posterior(&k, &d, &history).var(1), epsilon = 1e-12);
        last = gp.variance(1);
    }
}

#[test]
fn huge_noise_barely_informs() {
    let gp = GpPosterior::prior(Kernel::squared_exponential(0.3, 1).unwrap(), line(4)).unwrap();
    let after = gp.clone().extend(0, 3.0, 1e6).unwrap();
    for i in 0..4 {
        assert!((gp.variance(i) - after.variance(i)).abs() < 1e-5);
    }
}

#[test]
fn noise_floor_applies_to_tiny_noise() {
    let gp = GpPosterior::prior(Kernel::squared_exponential(0.3, 1).unwrap(), line(3))
        .unwrap()
        .extend(0, 1.0, 0.0)
        .unwrap()
        .extend(0, 1.0, 0.0)
        .unwrap();
    assert_eq!(gp.history()[0].noise_var, 0.0);
    assert_eq!(gp.effective_noise(), &[1e-10, 1e-10]);
    assert!(gp.variance(0) >= 0.0 && gp.variance(0) < 1e-9);
    assert!(gp.factor().is_ok());
}

#[test]
fn lookahead_examples() {
    let k = Kernel::squared_exponential(0.1, 1).unwrap();
    let d = Arc::new(Domain::new(1, vec![0.0, 50.0]).unwrap());
    let gp = GpPosterior::prior(k, d).unwrap();
    for &noise in &[1e-6, 0.3, 1.0] {
        let v = gp.lookahead_variances(0, noise, &[0]).unwrap();
        assert_abs_diff_eq!(v[0], noise / (1.0 + noise), epsilon = 1e-14);
    }
    // far-away point carries zero covariance
    assert_eq!(gp.lookahead_variances(0, 0.1, &[1]).unwrap(), vec![1.0]);
}

#[test]
fn batch_lookahead_examples() {
    let mut r = rng(3);
    let inst = random_instance(&mut r, 20, 8);
    let gp = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
    let all: Vec<usize> = (0..inst.domain.len()).collect();
    assert_eq!(gp.batch_lookahead_variances(&[], &all).unwrap(), gp.variances());
    let single = gp.lookahead_variances(1, 0.02, &all).unwrap();
    let batch = gp.batch_lookahead_variances(&[(1, 0.02)], &all).unwrap();
    for (a, b) in single.iter().zip(&batch) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    let twice = gp.batch_lookahead_variances(&[(0, 0.2), (0, 0.2)], &all).unwrap();
    let halved = gp.batch_lookahead_variances(&[(0, 0.1)], &all).unwrap();
    for (a, b) in twice.iter().zip(&halved) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
}

#[test]
fn multi_noise_levels_share_posterior_per_point() {
    // Observing a point at any level updates the same D0 variance.
    let k = Kernel::squared_exponential(0.4, 1).unwrap();
    let d = line(3);
    let gp = GpPosterior::prior(k.clone(), d.clone())
        .unwrap()
        .extend(1, 0.5, 0.05)
        .unwrap()
        .extend(2, -0.1, 1e-6)
        .unwrap();
    let oracle = dense_posterior(&k, &d, &[(1, 0.5, 0.05), (2, -0.1, 1e-6)]);
    for i in 0..3 {
        assert_abs_diff_eq!(gp.variance(i), oracle.var(i), epsilon = 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lookahead_matches_refit(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 50, 25);
        let gp = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
        let n = inst.domain.len();
        let x = r.random_range(0..n);
        let noise = common::log_uniform(&mut r, 1e-6, 0.1);
        let targets: Vec<usize> = (0..n).collect();
        let fast = gp.lookahead_variances(x, noise, &targets).unwrap();
        let slow = dense_variances_after(&inst.kernel, &inst.domain, &inst.history, &[(x, noise)]);
        for i in 0..n {
            prop_assert!((fast[i] - slow[i]).abs() <= 1e-8, "{} vs {}", fast[i], slow[i]);
        }
    }

    #[test]
    fn batch_lookahead_matches_refit(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 40, 15);
        let gp = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
        let n = inst.domain.len();
        let added: Vec<(usize, f64)> = (0..r.random_range(0..6))
            .map(|_| (r.random_range(0..n), common::log_uniform(&mut r, 1e-6, 0.1)))
            .collect();
        let targets: Vec<usize> = (0..n).collect();
        let fast = gp.batch_lookahead_variances(&added, &targets).unwrap();
        let slow = dense_variances_after(&inst.kernel, &inst.domain, &inst.history, &added);
        for i in 0..n {
            prop_assert!((fast[i] - slow[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn variances_stay_in_prior_range_and_shrink(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 30, 20);
        let mut gp = GpPosterior::prior(inst.kernel.clone(), inst.domain.clone()).unwrap();
        for &(i, y, v) in &inst.history {
            let before = gp.variances();
            gp.push(i, y, v).unwrap();
            for (j, &b) in before.iter().enumerate() {
                let a = gp.variance(j);
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&a));
                prop_assert!(a <= b + 1e-10);
            }
        }
    }

    #[test]
    fn adding_to_a_batch_never_raises_variance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 20, 10);
        let gp = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
        let n = inst.domain.len();
        let mut s: Vec<(usize, f64)> = (0..r.random_range(0..4)).map(|_| (r.random_range(0..n), 0.01)).collect();
        let targets: Vec<usize> = (0..n).collect();
        let before = gp.batch_lookahead_variances(&s, &targets).unwrap();
        s.push((r.random_range(0..n), 0.01));
        let after = gp.batch_lookahead_variances(&s, &targets).unwrap();
        for i in 0..n {
            prop_assert!(after[i] <= before[i] + 1e-10);
        }
    }

    #[test]
    fn variance_ignores_observed_values(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 20, 10);
        let shifted: Vec<_> = inst.history.iter().map(|&(i, y, v)| (i, y + shift, v)).collect();
        let a = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&inst.history)).unwrap();
        let b = GpPosterior::fit(inst.kernel.clone(), inst.domain.clone(), &observations(&shifted)).unwrap();
        prop_assert_eq!(a.variances(), b.variances());
    }
}
