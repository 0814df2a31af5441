use ot_orch::envs::{
    brownian_bridge, build_env, half_moon_point, EnvConfig, EnvKind, EnvRound, Environment,
    ReferenceMode, SimRng, SyntheticEnv, TriageAccuracy, TriageEnv, TriageMode, TriageSchedule,
};
use ot_orch::Error;
use rand::SeedableRng;

fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn run(env: &mut dyn Environment, seed: u64) -> Vec<EnvRound> {
    let mut r = rng(seed);
    (1..=env.horizon()).map(|t| env.step(t, &mut r).unwrap()).collect()
}

fn synthetic(cfg: &EnvConfig, horizon: usize, m: usize, seed: u64) -> (SyntheticEnv, SimRng) {
    let mut r = rng(seed);
    let env = SyntheticEnv::new(cfg, horizon, m, &mut r).unwrap();
    (env, r)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn column(rounds: &[EnvRound], agent: usize) -> Vec<f64> {
    rounds.iter().map(|r| r.counterfactual_rewards[agent]).collect()
}

// Simpson quadrature of E[clamp(X, 0, 1)], X ~ N(mean, std^2).
fn clamped_normal_mean(mean: f64, std: f64) -> f64 {
    let (a, b, n) = (mean - 12.0 * std, mean + 12.0 * std, 20_000);
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let z = (x - mean) / std;
        x.clamp(0.0, 1.0) * (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn zero_variance_rewards_are_exactly_half() {
    let cfg = EnvConfig { reward_stds: vec![0.0; 4], ..EnvConfig::for_kind(EnvKind::IidG) };
    let (mut env, _) = synthetic(&cfg, 50, 4, 1);
    for r in run(&mut env, 2) {
        assert!(r.counterfactual_rewards.iter().all(|&x| x == 0.5));
    }
}

#[test]
fn gaussian_rewards_match_the_clamped_mean() {
    let means = vec![0.3, 0.5, 0.9, 0.05];
    let stds = vec![0.4, 0.1, 0.3, 0.2];
    let cfg = EnvConfig {
        reward_means: means.clone(),
        reward_stds: stds.clone(),
        ..EnvConfig::for_kind(EnvKind::IidG)
    };
    let t = 100_000;
    let (mut env, mut r) = synthetic(&cfg, t, 4, 3);
    let rounds: Vec<EnvRound> = (1..=t).map(|s| env.step(s, &mut r).unwrap()).collect();
    for k in 0..4 {
        let (m, _) = mean_std(&column(&rounds, k));
        let oracle = clamped_normal_mean(means[k], stds[k]);
        assert!((m - oracle).abs() < 0.01, "agent {k}: {m} vs {oracle}");
    }
}

#[test]
fn identical_outputs_have_identical_costs() {
    let cfg = EnvConfig {
        output_means: vec![0.4, 0.4, 0.7],
        output_stds: vec![0.1, 0.1, 0.2],
        ..EnvConfig::for_kind(EnvKind::IidG)
    };
    let (mut env, _) = synthetic(&cfg, 30, 3, 4);
    for r in run(&mut env, 5) {
        let c = &r.counterfactual_costs_clean;
        assert_eq!(c[0], c[1]);
        assert_ne!(c[0], c[2]);
    }
}

#[test]
fn noiseless_moons_lie_on_their_arcs() {
    let mut r = rng(6);
    let (mut upper, mut lower) = (0, 0);
    for _ in 0..2_000 {
        let [x, y] = half_moon_point(0.0, &mut r);
        let on_upper = (x * x + y * y - 1.0).abs() < 1e-12 && y >= -1e-12;
        let on_lower = ((x - 1.0).powi(2) + (y - 0.5).powi(2) - 1.0).abs() < 1e-12 && y <= 0.5 + 1e-12;
        assert!(on_upper || on_lower, "({x}, {y}) is on neither arc");
        upper += usize::from(on_upper);
        lower += usize::from(on_lower);
    }
    assert!(upper > 0 && lower > 0);
}

#[test]
fn moon_features_feed_the_task() {
    let (mut env, _) = synthetic(&EnvConfig::for_kind(EnvKind::IidM), 20, 4, 7);
    for r in run(&mut env, 8) {
        assert_eq!(r.task.features.len(), 2);
    }
}

#[test]
fn mixture_with_unit_weight_is_its_first_component() {
    let cfg = EnvConfig {
        mixture_means: vec![[0.4, 0.9]],
        mixture_stds: vec![[0.05, 0.2]],
        mixture_weights: vec![1.0],
        ..EnvConfig::for_kind(EnvKind::IidM)
    };
    let t = 50_000;
    let (mut env, mut r) = synthetic(&cfg, t, 1, 9);
    let rounds: Vec<EnvRound> = (1..=t).map(|s| env.step(s, &mut r).unwrap()).collect();
    let (m, s) = mean_std(&column(&rounds, 0));
    assert!((m - 0.4).abs() < 0.01 && (s - 0.05).abs() < 0.01, "{m} {s}");
}

#[test]
fn two_component_mixture_mean() {
    let cfg = EnvConfig {
        mixture_means: vec![[0.2, 0.65]],
        mixture_stds: vec![[0.05, 0.05]],
        mixture_weights: vec![0.3],
        ..EnvConfig::for_kind(EnvKind::IidM)
    };
    let t = 100_000;
    let (mut env, mut r) = synthetic(&cfg, t, 1, 10);
    let rounds: Vec<EnvRound> = (1..=t).map(|s| env.step(s, &mut r).unwrap()).collect();
    let (m, _) = mean_std(&column(&rounds, 0));
    assert!((m - 0.515).abs() < 0.01, "{m}");
}

#[test]
fn segment_std_ratio_and_stable_means() {
    let t = 100_000;
    let cfg = EnvConfig {
        reward_means: vec![0.5, 0.5],
        changepoints: Some(vec![t / 2]),
        segment_stds: vec![vec![0.05, 0.05], vec![0.3, 0.3]],
        ..EnvConfig::for_kind(EnvKind::NoniidPs)
    };
    let (mut env, mut r) = synthetic(&cfg, t, 2, 11);
    let mut latent = [Vec::new(), Vec::new()];
    let mut observed = [Vec::new(), Vec::new()];
    for s in 1..=t {
        let round = env.step(s, &mut r).unwrap();
        latent[round.meta.segment].push(env.latent_rewards()[0]);
        observed[round.meta.segment].push(round.counterfactual_rewards[1]);
    }
    let (_, s0) = mean_std(&latent[0]);
    let (_, s1) = mean_std(&latent[1]);
    assert!((s1 / s0 / 6.0 - 1.0).abs() < 0.1, "ratio {}", s1 / s0);
    let (m0, _) = mean_std(&observed[0]);
    let (m1, _) = mean_std(&observed[1]);
    assert!((m0 - m1).abs() < 0.02, "{m0} vs {m1}");
}

#[test]
fn drift_peak_is_exact() {
    let cfg = EnvConfig {
        reward_means: vec![0.5],
        reward_stds: vec![0.0],
        drift_amplitudes: vec![0.2],
        drift_phases: vec![0.0],
        drift_period: Some(100.0),
        ..EnvConfig::for_kind(EnvKind::NoniidSd)
    };
    let (mut env, mut r) = synthetic(&cfg, 100, 1, 12);
    for s in 1..25 {
        env.step(s, &mut r).unwrap();
    }
    let peak = env.step(25, &mut r).unwrap();
    assert!((peak.counterfactual_rewards[0] - 0.7).abs() < 1e-15);
}

#[test]
fn one_period_rolling_mean_is_the_base() {
    let (t, period) = (10_000, 1_000);
    let cfg = EnvConfig {
        reward_means: vec![0.5],
        reward_stds: vec![0.05],
        drift_amplitudes: vec![0.2],
        drift_period: Some(period as f64),
        ..EnvConfig::for_kind(EnvKind::NoniidSd)
    };
    let (mut env, mut r) = synthetic(&cfg, t, 1, 13);
    let rewards: Vec<f64> = (1..=t).map(|s| env.step(s, &mut r).unwrap().counterfactual_rewards[0]).collect();
    let mut window: f64 = rewards[..period].iter().sum();
    let mut worst: f64 = (window / period as f64 - 0.5).abs();
    for i in period..t {
        window += rewards[i] - rewards[i - period];
        worst = worst.max((window / period as f64 - 0.5).abs());
    }
    assert!(worst < 0.01, "{worst}");
}

#[test]
fn drift_outside_the_unit_interval_is_rejected() {
    let cfg = EnvConfig {
        reward_means: vec![0.9],
        drift_amplitudes: vec![0.2],
        ..EnvConfig::for_kind(EnvKind::NoniidSd)
    };
    assert!(matches!(cfg.validate(100, 1), Err(Error::InvalidConfig(_))));
}

#[test]
fn bridge_hits_its_endpoints() {
    let cfg = EnvConfig {
        bridge_starts: vec![0.2, 0.8],
        bridge_ends: vec![0.6, 0.3],
        ..EnvConfig::for_kind(EnvKind::NoniidBb)
    };
    let (env, _) = synthetic(&cfg, 200, 2, 14);
    for (k, (a, b)) in [(0.2, 0.6), (0.8, 0.3)].into_iter().enumerate() {
        let path = env.bridge_path(k).unwrap();
        assert_eq!(path.len(), 200);
        assert_eq!((path[0], path[199]), (a, b));
    }
}

#[test]
fn zero_volatility_bridge_is_a_line() {
    let path = brownian_bridge(0.2, 0.7, 11, 0.0, &mut rng(15));
    for (i, x) in path.iter().enumerate() {
        assert!((x - (0.2 + 0.05 * i as f64)).abs() < 1e-12);
    }
}

#[test]
fn bridge_midpoint_variance() {
    let (len, vol, n) = (101, 0.01, 10_000);
    let mut r = rng(16);
    let mids: Vec<f64> = (0..n).map(|_| brownian_bridge(0.5, 0.5, len, vol, &mut r)[50]).collect();
    let (_, s) = mean_std(&mids);
    // t (T - t) / T with t = 50 steps of a 100-step bridge.
    let expected = vol * vol * 50.0 * 50.0 / 100.0;
    assert!((s * s / expected - 1.0).abs() < 0.1, "{} vs {expected}", s * s);
}

fn collapse_matches_iid(cfg: EnvConfig, seed: u64) {
    let t = 100_000;
    let stds = vec![0.1, 0.15, 0.2, 0.05];
    let base = EnvConfig { reward_stds: stds.clone(), ..EnvConfig::for_kind(EnvKind::IidG) };
    let other = EnvConfig { reward_stds: stds, ..cfg };
    let (mut a, mut ra) = synthetic(&base, t, 4, seed);
    let (mut b, mut rb) = synthetic(&other, t, 4, seed + 1);
    let xa: Vec<EnvRound> = (1..=t).map(|s| a.step(s, &mut ra).unwrap()).collect();
    let xb: Vec<EnvRound> = (1..=t).map(|s| b.step(s, &mut rb).unwrap()).collect();
    for k in 0..4 {
        let (ma, sa) = mean_std(&column(&xa, k));
        let (mb, sb) = mean_std(&column(&xb, k));
        assert!((ma - mb).abs() < 0.01 && (sa - sb).abs() < 0.01, "{:?} agent {k}", other.kind);
    }
}

#[test]
fn degenerate_nonstationary_envs_collapse_to_iid() {
    collapse_matches_iid(
        EnvConfig { changepoints: Some(Vec::new()), ..EnvConfig::for_kind(EnvKind::NoniidPs) },
        20,
    );
    collapse_matches_iid(
        EnvConfig { drift_amplitudes: vec![0.0; 4], ..EnvConfig::for_kind(EnvKind::NoniidSd) },
        22,
    );
    collapse_matches_iid(
        EnvConfig {
            bridge_starts: vec![0.5; 4],
            bridge_ends: vec![0.5; 4],
            bridge_volatility: 0.0,
            ..EnvConfig::for_kind(EnvKind::NoniidBb)
        },
        24,
    );
}

fn all_configs() -> Vec<(EnvConfig, usize, usize)> {
    let mut v: Vec<(EnvConfig, usize, usize)> = EnvKind::SYNTHETIC
        .iter()
        .map(|&k| (EnvConfig::for_kind(k), 200, 4))
        .collect();
    let sliding = EnvConfig {
        reference_mode: ReferenceMode::Sliding,
        reference_gamma: Some(0.8),
        ..EnvConfig::for_kind(EnvKind::NoniidPs)
    };
    v.push((sliding, 200, 4));
    let mut tri = EnvConfig::for_kind(EnvKind::Triage);
    v.push((tri.clone(), 114, 2));
    tri.triage.schedule = TriageSchedule::Iid;
    v.push((tri.clone(), 114, 2));
    tri.triage.mode = TriageMode::Dataset;
    v.push((tri, 114, 2));
    v
}

#[test]
fn rewards_are_bounded_everywhere() {
    for (cfg, t, m) in all_configs() {
        for seed in 1..=5 {
            let mut r = rng(seed);
            let mut env = build_env(&cfg, t, m, &mut r).unwrap();
            for s in 1..=t {
                let round = env.step(s, &mut r).unwrap();
                assert_eq!(round.counterfactual_rewards.len(), m);
                assert!(round.counterfactual_rewards.iter().all(|x| (0.0..=1.0).contains(x)));
                assert!(round.counterfactual_costs_clean.iter().all(|c| c.is_finite() && *c >= 0.0));
                assert_eq!(round.task.round, s);
            }
        }
    }
}

#[test]
fn same_seed_same_rounds() {
    for (cfg, t, m) in all_configs() {
        let trace = |seed| {
            let mut r = rng(seed);
            let mut env = build_env(&cfg, t, m, &mut r).unwrap();
            format!("{:?}", run(env.as_mut(), seed + 100))
        };
        assert_eq!(trace(3), trace(3));
        assert_ne!(trace(3), trace(4));
    }
}

#[test]
fn rounds_outside_the_horizon_are_rejected() {
    for (cfg, t, m) in all_configs() {
        let mut r = rng(1);
        let mut env = build_env(&cfg, t, m, &mut r).unwrap();
        assert!(matches!(env.step(0, &mut r), Err(Error::InvalidRound { .. })));
        assert!(matches!(env.step(t + 1, &mut r), Err(Error::InvalidRound { .. })));
    }
}

#[test]
fn triage_profile_costs() {
    let acc = TriageAccuracy::default();
    for label in [0, 1] {
        let shifted = acc.clean_costs(true, label).unwrap();
        let id = acc.clean_costs(false, label).unwrap();
        assert!((shifted[0] - 0.193).abs() < 1e-12 && (shifted[1] - 0.053).abs() < 1e-12);
        assert!((id[0] - 0.018).abs() < 1e-12 && (id[1] - 0.120).abs() < 1e-12);
        assert!(id[0] < id[1]);
    }
    assert!(acc.human_shifted > acc.ai_shifted && acc.ai_id > acc.human_id);
}

#[test]
fn triage_schedule_and_costs_per_round() {
    let cfg = EnvConfig::for_kind(EnvKind::Triage);
    let mut r = rng(30);
    let mut env = TriageEnv::new(&cfg.triage, 114, 2, &mut r).unwrap();
    for s in 1..=114 {
        let round = env.step(s, &mut r).unwrap();
        assert_eq!(round.meta.shifted, s > 57);
        let expected = if s > 57 { [0.193, 0.053] } else { [0.018, 0.120] };
        for (c, e) in round.counterfactual_costs_clean.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12);
        }
        let correct = round.meta.correct.clone().unwrap();
        for k in 0..2 {
            assert_eq!(round.counterfactual_rewards[k], f64::from(u8::from(correct[k])));
        }
    }
}

#[test]
fn perfect_agents_always_score() {
    let mut cfg = EnvConfig::for_kind(EnvKind::Triage);
    cfg.triage.accuracy = TriageAccuracy { ai_id: 1.0, ai_shifted: 1.0, human_id: 1.0, human_shifted: 1.0 };
    let mut r = rng(31);
    let mut env = build_env(&cfg, 100, 2, &mut r).unwrap();
    for round in run(env.as_mut(), 32) {
        assert_eq!(round.counterfactual_rewards, vec![1.0, 1.0]);
    }
}

#[test]
fn dataset_triage_needs_enough_patients() {
    let mut cfg = EnvConfig::for_kind(EnvKind::Triage);
    cfg.triage.mode = TriageMode::Dataset;
    assert!(cfg.validate(114, 2).is_ok());
    assert!(matches!(cfg.validate(200, 2), Err(Error::InvalidConfig(_))));
    assert!(matches!(
        EnvConfig::for_kind(EnvKind::Triage).validate(100, 3),
        Err(Error::InvalidConfig(_))
    ));
}
