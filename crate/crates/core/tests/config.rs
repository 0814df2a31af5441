use ot_orch::config::{config_hash, parse_settings, Settings};
use ot_orch::envs::{EnvConfig, EnvKind};
use ot_orch::model::{CiMethod, EtaSchedule};
use ot_orch::Error;
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = EnvKind> {
    let mut all = EnvKind::SYNTHETIC.to_vec();
    all.push(EnvKind::Triage);
    proptest::sample::select(all)
}

prop_compose! {
    fn settings()(
        kind in kinds(),
        horizon in 0usize..100_000,
        num_agents in 1usize..12,
        seeds in proptest::collection::vec(0..=i64::MAX as u64, 0..6),
        lambda in 0.0f64..50.0,
        lambda_eval in proptest::option::of(0.0f64..50.0),
        alpha in 0.01f64..0.99,
        eta0 in 0.01f64..20.0,
        beta in 0.0f64..1.0,
        window in 1usize..100,
        decay in any::<bool>(),
        normal in any::<bool>(),
        clean in any::<bool>(),
        grid in proptest::collection::vec(0.0f64..100.0, 1..5),
        volatility in 0.0f64..0.5,
        check_seed in 0..=i64::MAX as u64,
    ) -> Settings {
        let mut s = Settings::default();
        s.run.horizon = horizon;
        s.run.num_agents = num_agents;
        s.run.seeds = seeds;
        s.run.lambda_grid = grid;
        s.run.ci_method = if normal { CiMethod::Normal } else { CiMethod::StudentT };
        s.run.oracle_uses_clean_costs = clean;
        s.policy.lambda = lambda;
        s.policy.lambda_eval = lambda_eval;
        s.policy.alpha = alpha;
        s.policy.eta0 = eta0;
        s.policy.beta = beta;
        s.policy.history_window = window;
        s.policy.eta_schedule = if decay { EtaSchedule::InverseSqrt } else { EtaSchedule::Constant };
        s.env.environment = EnvConfig::for_kind(kind);
        s.env.environment.bridge_volatility = volatility;
        s.checks.seed = check_seed;
        s
    }
}

proptest! {
    #[test]
    fn toml_round_trip(s in settings()) {
        let text = s.to_toml().unwrap();
        let back = parse_settings(&text, &[]).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn overrides_match_file_values(horizon in 1usize..10_000, lambda in 0.0f64..20.0) {
        let from_file = parse_settings(
            &format!("[run]\nhorizon = {horizon}\n[policy]\nlambda = {lambda:?}\n"),
            &[],
        ).unwrap();
        let bare = parse_settings("", &[format!("horizon={horizon}"), format!("lambda={lambda:?}")]).unwrap();
        let dotted = parse_settings(
            "",
            &[format!("run.horizon={horizon}"), format!("policy.lambda={lambda:?}")],
        ).unwrap();
        prop_assert_eq!(&bare, &from_file);
        prop_assert_eq!(&dotted, &from_file);
    }
}

#[test]
fn overrides_win_over_the_file() {
    let s = parse_settings("[run]\nhorizon = 50\n", &["horizon=7".into()]).unwrap();
    assert_eq!(s.run.horizon, 7);
    let s = parse_settings("", &["env.kind=noniid_ps".into(), "seeds=[3, 4]".into()]).unwrap();
    assert_eq!(s.env.environment.kind, EnvKind::NoniidPs);
    assert_eq!(s.run.seeds, vec![3, 4]);
    let s = parse_settings("", &["env.triage.accuracy.ai_id=0.5".into()]).unwrap();
    assert_eq!(s.env.environment.triage.accuracy.ai_id, 0.5);
}

#[test]
fn bad_overrides_are_config_errors() {
    for ov in ["nonsense=1", "horizon", "run..horizon=1", "horizon=-3", "env.bogus=1", "policy.lambda=\"x\""] {
        assert!(matches!(parse_settings("", &[ov.to_string()]), Err(Error::Config(_))), "{ov}");
    }
    assert!(matches!(parse_settings("[env]\nnot_a_key = 1\n", &[]), Err(Error::Config(_))));
    assert!(matches!(parse_settings("[run\n", &[]), Err(Error::Config(_))));
    // TOML integers are signed.
    assert!(matches!(parse_settings("[run]\nseeds = [9223372036854775808]\n", &[]), Err(Error::Config(_))));
}

#[test]
fn settings_resolve_to_the_experiment() {
    let s = parse_settings(
        "[run]\nhorizon = 30\nnum_agents = 2\nseeds = [5]\n[policy]\nlambda = 2.5\n[env]\nkind = \"triage\"\n",
        &[],
    )
    .unwrap();
    let e = s.experiment();
    assert_eq!((e.horizon, e.num_agents, e.lambda), (30, 2, 2.5));
    assert_eq!(e.seeds, vec![5]);
    assert_eq!(e.environment.kind, EnvKind::Triage);
    assert_eq!(e.eval_lambda(), 2.5);
    e.validate().unwrap();
}

#[test]
fn hash_is_sha256_of_the_bytes() {
    assert_eq!(
        config_hash(b""),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    assert_eq!(
        config_hash(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (name, kind) in [("synthetic.toml", EnvKind::NoniidPs), ("triage.toml", EnvKind::Triage)] {
        let (s, _) = ot_orch::config::load_settings(&dir.join(name), &[]).unwrap();
        assert_eq!(s.env.environment.kind, kind);
        s.experiment().validate().unwrap();
    }
}
