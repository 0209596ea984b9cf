mod common;

use common::*;
use proptest::prelude::*;
use sempath::data::{CovDivisor, SampleMoments};
use sempath::optim::{multi_start_fit, OptimizerConfig};
use sempath::penalty::PenaltyConfig;
use sempath::ram::{implied_moments, ml_discrepancy, ml_gradient, RamModel};
use sempath::simulate::{simulate_cfa, simulate_growth, growth_names};

fn gradient_error(ram: &RamModel, data: &SampleMoments, points: usize, seed: u64) -> f64 {
    let center = multi_start_fit(ram, data, &PenaltyConfig::none(), &OptimizerConfig::default())
        .unwrap()
        .theta;
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let theta = random_admissible(ram, &center, 0.4, &mut rng);
        let f = |t: &[f64]| ml_discrepancy(ram, t, data).unwrap();
        let fd = fd_gradient(&f, &theta);
        let g = ml_gradient(ram, &theta, data).unwrap();
        worst = worst.max(max_rel_err(&g, &fd));
    }
    worst
}

#[test]
fn gradient_matches_finite_differences_two_indicator() {
    let err = gradient_error(&two_indicator_model(), &two_indicator_data(), 20, 1);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn gradient_matches_finite_differences_cfa() {
    let err = gradient_error(&cfa_model(), &cfa_data(3), 20, 2);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn gradient_matches_finite_differences_growth() {
    let err = gradient_error(&growth_model(), &growth_data(300, 5), 10, 3);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn gradient_with_mean_structure() {
    use sempath::ram::build_ram;
    use sempath::syntax::parse_model;
    let spec = parse_model(&cfa_text()).unwrap().with_mean_structure(true);
    let ram = build_ram(&spec, &names(&CFA_NAMES)).unwrap();
    let rows = simulate_cfa(200, &CFA_LOADINGS, 8);
    let mut shifted = rows.clone();
    for mut c in shifted.column_iter_mut() {
        c.add_scalar_mut(0.3);
    }
    let data = SampleMoments::from_raw(&shifted, names(&CFA_NAMES), CovDivisor::N).unwrap();
    let mut r = rng(4);
    let start = ram.default_start(&data);
    for _ in 0..10 {
        let theta = random_admissible(&ram, &start, 0.4, &mut r);
        let f = |t: &[f64]| ml_discrepancy(&ram, t, &data).unwrap();
        let err = max_rel_err(&ml_gradient(&ram, &theta, &data).unwrap(), &fd_gradient(&f, &theta));
        assert!(err < 1e-5, "{err:e}");
    }
}

fn growth_truth(ram: &RamModel) -> Vec<f64> {
    let mut theta = vec![0.0; ram.n_params()];
    for p in ram.params() {
        theta[p.id] = match p.name.as_str() {
            "c1 -> i" | "c1 -> s" => 1.0,
            "c2 -> i" | "c2 -> s" => 0.2,
            "i ~~ i" => 1.0,
            "s ~~ s" => 0.25,
            n if n.starts_with('x') && n.contains("~~") => 1.0,
            _ => 0.0,
        };
    }
    theta
}

#[test]
fn growth_implied_covariance_matches_monte_carlo() {
    let ram = growth_model();
    let (sigma, _) = implied_moments(&ram, &growth_truth(&ram)).unwrap();
    let rows = simulate_growth(1_000_000, 2024);
    let mc = SampleMoments::from_raw(&rows, growth_names(), CovDivisor::N).unwrap();
    // on the correlation scale; raw variances reach ~21, where the Monte-Carlo
    // standard error alone is ~0.03
    let p = sigma.nrows();
    let mut diff: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let scale = (sigma[(i, i)] * sigma[(j, j)]).sqrt();
            diff = diff.max((sigma[(i, j)] - mc.cov()[(i, j)]).abs() / scale);
        }
    }
    assert!(diff < 1e-2, "max standardized |Σ − C| = {diff}");
}

#[test]
fn cfa_implied_covariance_matches_monte_carlo() {
    let ram = cfa_model();
    let mut theta = vec![0.0; ram.n_params()];
    theta[..7].copy_from_slice(&CFA_LOADINGS);
    for v in ram.variance_params() {
        theta[v] = 1.0;
    }
    let (sigma, _) = implied_moments(&ram, &theta).unwrap();
    let rows = simulate_cfa(1_000_000, &CFA_LOADINGS, 77);
    let mc = SampleMoments::from_raw(&rows, names(&CFA_NAMES), CovDivisor::N).unwrap();
    let diff = (&sigma - mc.cov()).amax();
    assert!(diff < 5e-3, "max |Σ − C| = {diff}");
}

#[test]
fn discrepancy_is_zero_at_the_generating_point() {
    let ram = cfa_model();
    let mut theta = vec![0.0; ram.n_params()];
    theta[..7].copy_from_slice(&CFA_LOADINGS);
    for v in ram.variance_params() {
        theta[v] = 1.0;
    }
    let (sigma, _) = implied_moments(&ram, &theta).unwrap();
    let data = SampleMoments::new(sigma, None, 100, names(&CFA_NAMES)).unwrap();
    assert!(ml_discrepancy(&ram, &theta, &data).unwrap().abs() < 1e-12);
    assert!(ml_gradient(&ram, &theta, &data).unwrap().iter().all(|g| g.abs() < 1e-10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn implied_covariance_is_symmetric(seed in 0u64..10_000) {
        let ram = cfa_model();
        let mut r = rng(seed);
        let center = vec![0.5; ram.n_params()];
        let theta = random_admissible(&ram, &center, 0.9, &mut r);
        let (sigma, _) = implied_moments(&ram, &theta).unwrap();
        prop_assert!((&sigma - sigma.transpose()).amax() == 0.0);
    }

    #[test]
    fn discrepancy_is_nonnegative(seed in 0u64..10_000) {
        let ram = cfa_model();
        let data = cfa_data(seed % 7);
        let mut r = rng(seed);
        let center = vec![0.5; ram.n_params()];
        let theta = random_admissible(&ram, &center, 0.9, &mut r);
        prop_assert!(ml_discrepancy(&ram, &theta, &data).unwrap() >= -1e-12);
    }
}
