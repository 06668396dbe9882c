//! Independent dense oracles for the posterior, norms and budgets.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wgp_bandit::envs::{realized_budget, sample_rkhs_family, ChangeSchedule, RkhsFunction, SyntheticSpec};
use wgp_bandit::kernels::{se_kernel, ArmKernel, DomainGrid, KernelSpec};
use wgp_bandit::qff::build_qff;
use wgp_bandit::wgp::{
    fit_aggregated_posterior, fit_qff_posterior, fit_weighted_posterior, BanditHistory, QffArmFeatures,
    QffForm, WeightScheme,
};

fn se_arms(n: usize, l: f64) -> (DomainGrid, ArmKernel) {
    let grid = DomainGrid::uniform_1d(n).unwrap();
    let k = KernelSpec::squared_exponential(l).unwrap().arm_kernel(&grid).unwrap();
    (grid, k)
}

/// Plain GP regression: `k_t(x)^T (K_t + lambda I)^-1 y` and
/// `k(x,x) - k_t(x)^T (K_t + lambda I)^-1 k_t(x)`, kernel from coordinates.
fn unweighted_posterior(grid: &DomainGrid, l: f64, arms: &[usize], ys: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let k = |a: usize, b: usize| se_kernel(grid.point(a), grid.point(b), l).unwrap();
    let t = arms.len();
    let gram = DMatrix::from_fn(t, t, |i, j| k(arms[i], arms[j])) + DMatrix::identity(t, t) * lambda;
    let inv = gram.try_inverse().unwrap();
    let y = DVector::from_column_slice(ys);
    (0..grid.size())
        .map(|x| {
            let kx = DVector::from_iterator(t, arms.iter().map(|&a| k(a, x)));
            (kx.dot(&(&inv * &y)), k(x, x) - kx.dot(&(&inv * &kx)))
        })
        .unzip()
}

#[test]
fn unit_discount_matches_unweighted_regression() {
    let (grid, k) = se_arms(40, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arms: Vec<usize> = (0..10).map(|_| rng.random_range(0..40)).collect();
    let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = BanditHistory::consecutive(40, &arms, &ys).unwrap();
    let (m, v) = unweighted_posterior(&grid, 0.2, &arms, &ys, 1.0);
    let scheme = WeightScheme::uniform(1.0).unwrap();
    for post in [
        fit_weighted_posterior(&h, &scheme, &k).unwrap(),
        fit_aggregated_posterior(&h, &scheme, &k).unwrap(),
    ] {
        for x in 0..40 {
            assert!((post.mean_at(x) - m[x]).abs() < 1e-10);
            assert!((post.var_at(x) - v[x].max(0.0)).abs() < 1e-10);
        }
    }
}

#[test]
fn rkhs_norm_is_the_coefficient_quadratic_form() {
    let (grid, k) = se_arms(100, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let centers: Vec<usize> = (0..30).map(|_| rng.random_range(0..100)).collect();
    let alphas: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = RkhsFunction::new(&k, &centers, &alphas).unwrap();
    let kc = DMatrix::from_fn(30, 30, |i, j| se_kernel(grid.point(centers[i]), grid.point(centers[j]), 0.2).unwrap());
    let a = DVector::from_column_slice(&alphas);
    let expect = a.dot(&(&kc * &a)).sqrt();
    assert!((f.rkhs_norm() - expect).abs() < 1e-9 * expect.max(1.0));
    for x in [0, 17, 99] {
        let v: f64 = centers
            .iter()
            .zip(&alphas)
            .map(|(&c, a)| a * se_kernel(grid.point(c), grid.point(x), 0.2).unwrap())
            .sum();
        assert!((f.value(x) - v).abs() < 1e-12);
    }
}

#[test]
fn abrupt_budget_is_the_sum_of_jump_norms() {
    let spec = SyntheticSpec::default();
    let k = spec.kernel().unwrap();
    let phases = sample_rkhs_family(3, 100, &k, 4).unwrap();
    let expect = phases[0].distance(&phases[1], &k) + phases[1].distance(&phases[2], &k);
    let diff = |a: &RkhsFunction, b: &RkhsFunction| {
        let d = a.coefficients() - b.coefficients();
        d.dot(&(k.gram() * &d)).sqrt()
    };
    assert!((expect - diff(&phases[0], &phases[1]) - diff(&phases[1], &phases[2])).abs() < 1e-9);
    let schedule = ChangeSchedule::abrupt(vec![100, 200], phases).unwrap();
    let got = realized_budget(&schedule, 500, &k).unwrap();
    assert!((got - expect).abs() < 1e-9);
}

#[test]
fn slow_budget_telescopes() {
    let spec = SyntheticSpec {
        horizon: 60,
        ..Default::default()
    };
    let k = spec.kernel().unwrap();
    let f = sample_rkhs_family(3, 100, &k, 5).unwrap();
    let schedule = ChangeSchedule::Slow {
        anchors: [f[0].clone(), f[1].clone(), f[2].clone()],
    };
    let per_step: f64 = (1..60)
        .map(|t| {
            let a = schedule.function_at(t, 60, &k).unwrap();
            let b = schedule.function_at(t + 1, 60, &k).unwrap();
            a.distance(&b, &k)
        })
        .sum();
    // rounds start at t = 1, a step of 2/T into the first segment
    let telescoped = (1.0 - 2.0 / 60.0) * f[0].distance(&f[1], &k) + f[1].distance(&f[2], &k);
    assert!((per_step - telescoped).abs() < 1e-8 * telescoped);
    assert!((realized_budget(&schedule, 60, &k).unwrap() - per_step).abs() < 1e-8 * per_step);
}

// C fixed by a calibration sweep over l in {0.3, 0.5, 1}, mbar in 4..=10,
// eta in {0.8, .., 0.99}: the largest observed ratio was 0.0078.
const SD_GAP_CONSTANT: f64 = 0.05;

#[test]
fn qff_sd_gap_scales_with_feature_error() {
    let grid = DomainGrid::uniform_1d(50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let l = [0.3, 0.5, 1.0][rng.random_range(0..3)];
        let mbar = rng.random_range(4..=10);
        let eta: f64 = [0.8, 0.9, 0.95][rng.random_range(0..3)];
        let len = rng.random_range(1..=60);
        let k = KernelSpec::squared_exponential(l).unwrap().arm_kernel(&grid).unwrap();
        let map = build_qff(mbar, 1, l).unwrap();
        let limit = SD_GAP_CONSTANT * map.eps_m().sqrt() / (1.0 - eta);
        let features = QffArmFeatures::new(map, &grid).unwrap();
        let arms: Vec<usize> = (0..len).map(|_| rng.random_range(0..50)).collect();
        let ys: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = BanditHistory::consecutive(50, &arms, &ys).unwrap();
        let scheme = WeightScheme::new(eta, 1.0, 0.0).unwrap();
        let exact = fit_weighted_posterior(&h, &scheme, &k).unwrap();
        let approx = fit_qff_posterior(&h, &scheme, &features, QffForm::Auto).unwrap();
        for x in 0..50 {
            assert!((exact.sd_at(x) - approx.sd_at(x)).abs() <= limit);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncation_error_is_negligible(
        arms in prop::collection::vec(0usize..30, 1..120),
        eta in 0.6f64..0.97,
    ) {
        let (_, k) = se_arms(30, 0.3);
        let ys: Vec<f64> = arms.iter().map(|&a| (a as f64 * 0.3).cos()).collect();
        let h = BanditHistory::consecutive(30, &arms, &ys).unwrap();
        let full = fit_aggregated_posterior(&h, &WeightScheme::new(eta, 1.0, 0.0).unwrap(), &k).unwrap();
        let cut = fit_aggregated_posterior(&h, &WeightScheme::new(eta, 1.0, 1e-8).unwrap(), &k).unwrap();
        for x in 0..30 {
            prop_assert!((full.mean_at(x) - cut.mean_at(x)).abs() < 1e-6);
            prop_assert!((full.var_at(x) - cut.var_at(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn aggregated_fit_equals_row_fit(
        arms in prop::collection::vec(0usize..20, 1..40),
        eta in 0.5f64..=1.0,
        lambda in 0.1f64..5.0,
    ) {
        let (_, k) = se_arms(20, 0.25);
        let ys: Vec<f64> = arms.iter().enumerate().map(|(i, &a)| (i as f64).sin() + a as f64 * 0.05).collect();
        let h = BanditHistory::consecutive(20, &arms, &ys).unwrap();
        let s = WeightScheme::new(eta, lambda, 0.0).unwrap();
        let a = fit_weighted_posterior(&h, &s, &k).unwrap();
        let b = fit_aggregated_posterior(&h, &s, &k).unwrap();
        for x in 0..20 {
            prop_assert!((a.mean_at(x) - b.mean_at(x)).abs() < 1e-8);
            prop_assert!((a.var_at(x) - b.var_at(x)).abs() < 1e-8);
        }
    }
}
