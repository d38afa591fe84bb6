use fdiv::harness::{fit_power_law, normalized_error, run_experiment, write_results_csv, ExperimentConfig, Profile};
use proptest::prelude::*;

fn scaling(n: Vec<usize>, replications: usize) -> ExperimentConfig {
    serde_json::from_value(serde_json::json!({
        "experiment": "scaling_1d",
        "generator": {"variant": "bernoulli_kernel_1d", "beta": 0.5},
        "features": {"type": "bernoulli_kernel", "max_freq": 16},
        "estimators": ["regular", "debiased"],
        "n": n,
        "replications": replications,
        "lambda": {"fixed": 1e-3}
    }))
    .unwrap()
}

fn csv_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let out = run_experiment(cfg).unwrap();
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &out.rows).unwrap();
    buf
}

#[test]
fn identical_configs_give_identical_bytes() {
    let cfg = scaling(vec![40, 80], 4);
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
}

#[test]
fn seeds_change_the_draws() {
    let a = scaling(vec![40], 1);
    let mut b = a.clone();
    b.base_seed += 1;
    assert_ne!(csv_bytes(&a), csv_bytes(&b));
}

#[test]
fn single_cell_run() {
    let out = run_experiment(&scaling(vec![50], 1)).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert!(out.summary.failures.is_empty());
    assert!(out.summary.exponents.is_empty());
    let exact = out.summary.exact.unwrap();
    for row in &out.rows {
        assert_eq!(row.exact, exact);
        assert_eq!(row.norm_error, normalized_error(row.estimate, exact));
        assert_eq!(row.seconds, 0.0);
    }
    assert!(out.summary.cell("debiased", 50).unwrap().mean_estimate < out.summary.cell("regular", 50).unwrap().mean_estimate);
}

#[test]
fn ci_profile_caps_the_run() {
    let cfg = scaling(vec![64, 4096], 100).apply_profile(Profile::Ci);
    assert!(cfg.replications <= 16);
    assert!(cfg.n.iter().all(|&n| n <= 1024));
}

#[test]
fn invalid_config_is_rejected() {
    assert!(run_experiment(&scaling(vec![], 1)).is_err());
    assert!(run_experiment(&scaling(vec![10], 0)).is_err());
}

proptest! {
    #[test]
    fn power_law_recovers_exponent(sigma in 0.1f64..2.0, scale in 0.01f64..100.0) {
        let ns: Vec<f64> = (4..12).map(|k| 2f64.powi(k)).collect();
        let errs: Vec<f64> = ns.iter().map(|n| scale * n.powf(-sigma)).collect();
        let fit = fit_power_law(&ns, &errs).unwrap();
        prop_assert!((fit.sigma - sigma).abs() < 1e-9);
        prop_assert!((fit.intercept - scale.ln()).abs() < 1e-8);
        prop_assert!(fit.r_squared > 1.0 - 1e-12);
        prop_assert_eq!(fit.excluded, 0);
    }
}

#[test]
fn power_law_skips_nonpositive_errors() {
    let fit = fit_power_law(&[1.0, 2.0, 4.0, 8.0], &[1.0, 0.0, 0.25, 0.125]).unwrap();
    assert_eq!(fit.excluded, 1);
    assert!(fit_power_law(&[1.0, 2.0, 4.0], &[1.0, -1.0, 0.5]).is_err());
}
