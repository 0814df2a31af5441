use ot_orch::checks::{run_checks, ChecksConfig};

#[test]
fn checks_are_deterministic() {
    let cfg = ChecksConfig::default();
    for selector in ["margin", "ot", "structural"] {
        let a = run_checks(selector, &cfg).unwrap();
        let b = run_checks(selector, &cfg).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{selector}");
    }
}

#[test]
fn regret_control_fails_on_its_own_instance() {
    let cfg = ChecksConfig {
        regret_horizons: vec![200, 800, 3200],
        regret_runs: 4,
        ..ChecksConfig::default()
    };
    let results = run_checks("regret", &cfg).unwrap();
    assert_eq!(results.len(), 2);
    let control = &results[1];
    assert!(control.passed, "{control}");
    assert!(control.statistic >= 0.9);
}

#[test]
fn a_different_seed_changes_stochastic_statistics() {
    let base = ChecksConfig::default();
    let other = ChecksConfig { seed: base.seed + 1, ..base.clone() };
    let a = run_checks("margin", &base).unwrap();
    let b = run_checks("margin", &other).unwrap();
    assert_ne!(a[0].statistic, b[0].statistic);
}
