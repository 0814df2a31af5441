//! Episode loop, metrics, seed aggregation and the λ sweep.
//!
//! Every episode draws from four independent random streams derived from the
//! episode seed alone: environment, cost noise, survival, and policy. The
//! policy kind and λ do not enter the derivation, so two policies run on the
//! same seed face exactly the same tasks, rewards and noisy costs.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::envs::{build_env, triage, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::model::{CiMethod, ExperimentConfig, RewardSource, RoundRecord};
use crate::ot::AlignmentSample;
use crate::policy::{policy_observe, policy_step, PolicyKind, PolicyState};
use crate::survival::{frailty_reward, sample_event, sample_frailty};

/// Independent random stream of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Env = 1,
    CostNoise = 2,
    Survival = 3,
    Policy = 4,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(seed) ^ role)`.
pub fn derive_seed(seed: u64, role: StreamRole) -> u64 {
    splitmix64(splitmix64(seed) ^ role as u64)
}

pub fn stream(seed: u64, role: StreamRole) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, role))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub policy: PolicyKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
}

/// Builds the configured environment and runs one episode.
pub fn run_episode(kind: PolicyKind, cfg: &ExperimentConfig, seed: u64) -> Result<Trajectory> {
    if cfg.horizon == 0 {
        return Ok(Trajectory { policy: kind, seed, config: cfg.clone(), records: Vec::new() });
    }
    cfg.validate()?;
    let mut env_rng = stream(seed, StreamRole::Env);
    let mut env = build_env(&cfg.environment, cfg.horizon, cfg.num_agents, &mut env_rng)?;
    run_episode_in(env.as_mut(), &mut env_rng, kind, cfg, seed)
}

/// Runs one episode against an existing environment, stepping it with `env_rng`.
pub fn run_episode_in(
    env: &mut dyn Environment,
    env_rng: &mut ChaCha8Rng,
    kind: PolicyKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Trajectory> {
    let m = env.num_agents();
    let mut noise_rng = stream(seed, StreamRole::CostNoise);
    let mut surv_rng = stream(seed, StreamRole::Survival);
    let mut policy_rng = stream(seed, StreamRole::Policy);
    let frailty = cfg.frailty_config();
    let survival_rewards =
        cfg.reward_source == RewardSource::Survival && cfg.environment.kind != EnvKind::Triage;
    let mut state = PolicyState::new(m, cfg.history_window);
    let mut records = Vec::with_capacity(cfg.horizon);

    for t in 1..=cfg.horizon {
        let round = env.step(t, env_rng)?;
        let agents = env.agents();
        let costs_noisy: Vec<f64> = round
            .counterfactual_costs_clean
            .iter()
            .zip(agents)
            .map(|(&c, a)| AlignmentSample::draw(c, a.cost_noise_sigma, &mut noise_rng).noisy)
            .collect();
        let theta = sample_frailty(&frailty, &mut surv_rng);
        let events: Vec<_> = agents
            .iter()
            .map(|a| sample_event(&a.survival, &round.task.features, theta, &cfg.censoring, &mut surv_rng))
            .collect();
        let rewards = if survival_rewards {
            events.iter().map(|e| frailty_reward(e.delta, e.s_at_t, theta)).collect()
        } else {
            round.counterfactual_rewards
        };

        let (chosen, _) = policy_step(kind, &state, &costs_noisy, cfg, &mut policy_rng)?;
        policy_observe(kind, &mut state, chosen, rewards[chosen], costs_noisy[chosen], cfg);

        records.push(RoundRecord {
            round: t,
            chosen,
            reward_chosen: rewards[chosen],
            cost_chosen_noisy: costs_noisy[chosen],
            counterfactual_rewards: rewards,
            counterfactual_costs_clean: round.counterfactual_costs_clean,
            counterfactual_costs_noisy: costs_noisy,
            censored: !events[chosen].delta,
            observed_time: events[chosen].t_obs,
            correct: round.meta.correct.as_ref().map(|c| c[chosen]),
            shifted: round.meta.shifted,
            frailty: theta,
        });
    }
    Ok(Trajectory { policy: kind, seed, config: cfg.clone(), records })
}

/// Runs `kind` over every seed, in parallel on `threads` workers when above one.
/// Output order follows `seeds`.
pub fn run_seeds(
    kind: PolicyKind,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<Trajectory>> {
    if threads <= 1 {
        return seeds.iter().map(|&s| run_episode(kind, cfg, s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| run_episode(kind, cfg, s)).collect())
}

/// `R_t(i) - lambda W_t(i)` with the noisy cost the learner saw.
pub fn net_utility(r: &RoundRecord, i: usize, lambda: f64) -> f64 {
    r.counterfactual_rewards[i] - lambda * r.counterfactual_costs_noisy[i]
}

fn utility(r: &RoundRecord, i: usize, lambda: f64, clean: bool) -> f64 {
    let cost = if clean {
        r.counterfactual_costs_clean[i]
    } else {
        r.counterfactual_costs_noisy[i]
    };
    r.counterfactual_rewards[i] - lambda * cost
}

/// `sum_t max_i U_t(i) - U_t(i_t)`.
pub fn oracle_regret(records: &[RoundRecord], lambda: f64, clean_costs: bool) -> f64 {
    records
        .iter()
        .map(|r| {
            let best = (0..r.counterfactual_rewards.len())
                .map(|i| utility(r, i, lambda, clean_costs))
                .fold(f64::NEG_INFINITY, f64::max);
            best - utility(r, r.chosen, lambda, clean_costs)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cum_reward: f64,
    pub cum_net_utility: f64,
    /// Noisy costs paid by the chosen agents.
    pub cum_alignment_cost: f64,
    pub cum_alignment_cost_clean: f64,
    pub oracle_regret: f64,
    pub event_rate: f64,
    pub mean_observed_time: f64,
    pub team_accuracy: Option<f64>,
    pub escalation_rate: Option<f64>,
    pub escalation_rate_shifted: Option<f64>,
    pub escalation_rate_id: Option<f64>,
}

impl MetricsReport {
    /// `(name, value)` for every field, optional ones possibly absent.
    pub fn fields(&self) -> [(&'static str, Option<f64>); 11] {
        [
            ("cum_reward", Some(self.cum_reward)),
            ("cum_net_utility", Some(self.cum_net_utility)),
            ("cum_alignment_cost", Some(self.cum_alignment_cost)),
            ("cum_alignment_cost_clean", Some(self.cum_alignment_cost_clean)),
            ("oracle_regret", Some(self.oracle_regret)),
            ("event_rate", Some(self.event_rate)),
            ("mean_observed_time", Some(self.mean_observed_time)),
            ("team_accuracy", self.team_accuracy),
            ("escalation_rate", self.escalation_rate),
            ("escalation_rate_shifted", self.escalation_rate_shifted),
            ("escalation_rate_id", self.escalation_rate_id),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.fields().into_iter().find(|(n, _)| *n == name).and_then(|(_, v)| v)
    }
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores a trajectory. Triage fields are present only when the records
/// carry correctness; escalation means routing to the human agent.
pub fn metrics(traj: &Trajectory, lambda: f64) -> MetricsReport {
    let recs = &traj.records;
    let cum_reward: f64 = recs.iter().map(|r| r.reward_chosen).sum();
    let cum_alignment_cost: f64 = recs.iter().map(|r| r.cost_chosen_noisy).sum();
    let cum_alignment_cost_clean = recs
        .iter()
        .map(|r| r.counterfactual_costs_clean[r.chosen])
        .sum();
    let cum_net_utility = recs.iter().map(|r| r.reward_chosen - lambda * r.cost_chosen_noisy).sum();
    let triage = !recs.is_empty() && recs.iter().all(|r| r.correct.is_some());
    let escalation = |filter: &dyn Fn(&RoundRecord) -> bool| {
        mean_of(
            recs.iter()
                .filter(|r| filter(r))
                .map(|r| f64::from(u8::from(r.chosen == triage::HUMAN))),
        )
    };
    MetricsReport {
        cum_reward,
        cum_net_utility,
        cum_alignment_cost,
        cum_alignment_cost_clean,
        oracle_regret: oracle_regret(recs, lambda, traj.config.oracle_uses_clean_costs),
        event_rate: mean_of(recs.iter().map(|r| f64::from(u8::from(!r.censored)))).unwrap_or(0.0),
        mean_observed_time: mean_of(recs.iter().map(|r| r.observed_time)).unwrap_or(0.0),
        team_accuracy: if triage {
            mean_of(recs.iter().map(|r| f64::from(u8::from(r.correct == Some(true)))))
        } else {
            None
        },
        escalation_rate: if triage { escalation(&|_| true) } else { None },
        escalation_rate_shifted: if triage { escalation(&|r| r.shifted) } else { None },
        escalation_rate_id: if triage { escalation(&|r| !r.shifted) } else { None },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    /// Half-width of the 95% confidence interval.
    pub ci_halfwidth: f64,
    pub n_seeds: usize,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// 97.5% quantile used for a two-sided 95% interval over `n` values.
pub fn critical_value(n: usize, method: CiMethod) -> Result<f64> {
    match method {
        CiMethod::Normal => Ok(Z_975),
        CiMethod::StudentT => StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map(|t| t.inverse_cdf(0.975))
            .map_err(|e| Error::Numerical(format!("student t: {e}"))),
    }
}

/// Mean and 95% half-width of one sample.
pub fn mean_ci(values: &[f64], method: CiMethod) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientSeeds(n));
    }
    if values.iter().all(|&x| x == values[0]) {
        return Ok((values[0], 0.0));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, critical_value(n, method)? * (var / n as f64).sqrt()))
}

/// Per-metric mean and confidence half-width across seeds. Optional metrics
/// are included only when every report has them.
pub fn aggregate(reports: &[MetricsReport], method: CiMethod) -> Result<Vec<AggregateRow>> {
    if reports.len() < 2 {
        return Err(Error::InsufficientSeeds(reports.len()));
    }
    let names = reports[0].fields().map(|(n, _)| n);
    let mut rows = Vec::new();
    for name in names {
        let values: Option<Vec<f64>> = reports.iter().map(|r| r.get(name)).collect();
        if let Some(values) = values {
            let (mean, ci_halfwidth) = mean_ci(&values, method)?;
            rows.push(AggregateRow {
                metric: name.to_string(),
                mean,
                ci_halfwidth,
                n_seeds: values.len(),
            });
        }
    }
    Ok(rows)
}

/// Per-seed reports of one policy.
pub fn evaluate(
    kind: PolicyKind,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<MetricsReport>> {
    Ok(run_seeds(kind, cfg, seeds, threads)?
        .iter()
        .map(|t| metrics(t, cfg.eval_lambda()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `lambda=<value>` for sweep rows, the policy name for baselines.
    pub label: String,
    pub policy: PolicyKind,
    pub lambda: Option<f64>,
    pub reports: Vec<MetricsReport>,
    pub aggregates: Vec<AggregateRow>,
}

/// Runs the environment-matched OT policy at every λ in `grid`, then the
/// No-OT, Random and UCB1 baselines once. All rows are scored with the
/// config's evaluation λ, so the λ = 0 row reproduces the No-OT row.
pub fn lambda_sweep(
    grid: &[f64],
    cfg: &ExperimentConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    let eval = cfg.eval_lambda();
    let bot = PolicyKind::bot_orch_for(cfg.environment.is_noniid());
    let mut rows = Vec::new();
    for &lambda in grid {
        let c = ExperimentConfig { lambda, lambda_eval: Some(eval), ..cfg.clone() };
        let reports = evaluate(bot, &c, seeds, threads)?;
        rows.push(SweepRow {
            label: format!("lambda={lambda}"),
            policy: bot,
            lambda: Some(lambda),
            aggregates: aggregate(&reports, cfg.ci_method)?,
            reports,
        });
    }
    let base = ExperimentConfig { lambda_eval: Some(eval), ..cfg.clone() };
    for kind in [PolicyKind::NoOt, PolicyKind::Random, PolicyKind::Ucb1] {
        let reports = evaluate(kind, &base, seeds, threads)?;
        rows.push(SweepRow {
            label: kind.to_string(),
            policy: kind,
            lambda: None,
            aggregates: aggregate(&reports, cfg.ci_method)?,
            reports,
        });
    }
    Ok(rows)
}

/// Writes one trajectory as CSV: scalar columns, then the counterfactual
/// vectors flattened as `reward_<i>`, `cost_clean_<i>`, `cost_noisy_<i>`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = traj.records.first().map_or(0, |r| r.counterfactual_rewards.len());
    let mut header: Vec<String> = [
        "round", "chosen", "reward", "cost_noisy", "cost_clean", "censored", "t_obs", "shifted",
        "correct", "frailty",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["reward", "cost_clean", "cost_noisy"] {
        header.extend((0..m).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header)?;
    for r in &traj.records {
        let mut row = vec![
            r.round.to_string(),
            r.chosen.to_string(),
            r.reward_chosen.to_string(),
            r.cost_chosen_noisy.to_string(),
            r.counterfactual_costs_clean[r.chosen].to_string(),
            u8::from(r.censored).to_string(),
            r.observed_time.to_string(),
            u8::from(r.shifted).to_string(),
            r.correct.map_or(String::new(), |c| u8::from(c).to_string()),
            r.frailty.to_string(),
        ];
        for v in [
            &r.counterfactual_rewards,
            &r.counterfactual_costs_clean,
            &r.counterfactual_costs_noisy,
        ] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(traj: &Trajectory, path: &Path) -> Result<()> {
    write_trajectory_csv(traj, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: usize, chosen: usize, rewards: &[f64], costs: &[f64]) -> RoundRecord {
        RoundRecord {
            round,
            chosen,
            reward_chosen: rewards[chosen],
            cost_chosen_noisy: costs[chosen],
            counterfactual_rewards: rewards.to_vec(),
            counterfactual_costs_clean: costs.to_vec(),
            counterfactual_costs_noisy: costs.to_vec(),
            censored: false,
            observed_time: 1.0,
            correct: None,
            shifted: false,
            frailty: 1.0,
        }
    }

    #[test]
    fn net_utility_examples() {
        let r = rec(1, 0, &[1.0, 0.5], &[0.2, 0.5]);
        assert_eq!(net_utility(&r, 0, 0.0), 1.0);
        assert!((net_utility(&r, 0, 3.0) - 0.4).abs() < 1e-15);
        assert_eq!(net_utility(&r, 1, 1.0), 0.0);
    }

    #[test]
    fn regret_by_hand() {
        let good = [rec(1, 0, &[1.0, 0.0], &[0.0, 0.0]), rec(2, 1, &[0.0, 1.0], &[0.0, 0.0])];
        assert_eq!(oracle_regret(&good, 1.0, false), 0.0);
        let bad = [rec(1, 1, &[1.0, 0.0], &[0.0, 0.0]), rec(2, 0, &[0.0, 1.0], &[0.0, 0.0])];
        assert_eq!(oracle_regret(&bad, 1.0, false), 2.0);
        assert_eq!(oracle_regret(&[rec(1, 0, &[0.3], &[0.9])], 2.0, false), 0.0);
    }

    #[test]
    fn two_point_t_interval() {
        let (mean, half) = mean_ci(&[0.0, 1.0], CiMethod::StudentT).unwrap();
        assert_eq!(mean, 0.5);
        // t(1) 97.5% quantile is tan(0.475 pi) = 12.7062...
        let q = (0.475 * std::f64::consts::PI).tan();
        assert!((half - q * 0.5).abs() < 1e-6, "{half}");
        assert!(matches!(mean_ci(&[1.0], CiMethod::Normal), Err(Error::InsufficientSeeds(1))));
    }

    #[test]
    fn seed_streams_are_distinct() {
        let roles = [StreamRole::Env, StreamRole::CostNoise, StreamRole::Survival, StreamRole::Policy];
        let seeds: Vec<u64> = roles.iter().map(|&r| derive_seed(7, r)).collect();
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_ne!(derive_seed(7, StreamRole::Env), derive_seed(8, StreamRole::Env));
    }
}
