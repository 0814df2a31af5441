//! Orchestration policies: the OT-penalized Boltzmann rule over smoothed
//! reward estimates (i.i.d. and history-corrected variants), the
//! exponential-weights update, and the No-OT / Random / UCB1 baselines.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, EtaSchedule, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    BotOrchIid,
    BotOrchNoniid,
    /// The Boltzmann rule with the alignment penalty switched off. Uses the
    /// history correction exactly when the environment is non-i.i.d.
    NoOt,
    Random,
    Ucb1,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::BotOrchIid,
        PolicyKind::BotOrchNoniid,
        PolicyKind::NoOt,
        PolicyKind::Random,
        PolicyKind::Ucb1,
    ];

    /// The OT-penalized variant matched to an environment's arrival regime.
    pub fn bot_orch_for(noniid: bool) -> Self {
        if noniid {
            PolicyKind::BotOrchNoniid
        } else {
            PolicyKind::BotOrchIid
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::BotOrchIid => "bot_orch_iid",
            PolicyKind::BotOrchNoniid => "bot_orch_noniid",
            PolicyKind::NoOt => "no_ot",
            PolicyKind::Random => "random",
            PolicyKind::Ucb1 => "ucb1",
        }
    }

    pub fn is_bot_orch(&self) -> bool {
        matches!(self, PolicyKind::BotOrchIid | PolicyKind::BotOrchNoniid)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy '{s}'")))
    }
}

/// Learner state for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub log_weights: Vec<f64>,
    pub ema_rewards: Vec<f64>,
    pub running_means: Vec<f64>,
    pub play_counts: Vec<u64>,
    pub reward_history: Vec<VecDeque<f64>>,
    pub history_window: usize,
    pub round: usize,
}

impl PolicyState {
    pub fn new(num_agents: usize, history_window: usize) -> Self {
        Self {
            log_weights: vec![0.0; num_agents],
            ema_rewards: vec![0.0; num_agents],
            running_means: vec![0.0; num_agents],
            play_counts: vec![0; num_agents],
            reward_history: vec![VecDeque::with_capacity(history_window); num_agents],
            history_window,
            round: 0,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.log_weights.len()
    }
}

/// Inverse temperature at round `t >= 1`.
pub fn eta_at(t: usize, cfg: &ExperimentConfig) -> f64 {
    match cfg.eta_schedule {
        EtaSchedule::Constant => cfg.eta0,
        EtaSchedule::InverseSqrt => cfg.eta0 / (t.max(1) as f64).sqrt(),
    }
}

pub fn ema_update(prev: f64, reward: f64, alpha: f64) -> f64 {
    alpha * prev + (1.0 - alpha) * reward
}

/// `beta * (mean(buffer) - ema)`, or zero for an empty buffer.
pub fn history_correction<'a, I>(buffer: I, ema: f64, beta: f64) -> f64
where
    I: IntoIterator<Item = &'a f64>,
{
    let (sum, n) = buffer
        .into_iter()
        .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
    if n == 0 || beta == 0.0 {
        0.0
    } else {
        beta * (sum / n as f64 - ema)
    }
}

/// Max-shifted softmax of `eta * scores`.
pub fn softmax_scores(scores: &[f64], eta: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if !eta.is_finite() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score or temperature".into()));
    }
    let top = scores
        .iter()
        .map(|s| eta * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (eta * s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `pi(i) ∝ exp(eta (r_hat(i) - lambda W(i)))`.
pub fn softmax_policy(ema_rewards: &[f64], costs_noisy: &[f64], lambda: f64, eta: f64) -> Result<Vec<f64>> {
    if ema_rewards.len() != costs_noisy.len() {
        return Err(Error::Shape(format!(
            "{} reward estimates but {} costs",
            ema_rewards.len(),
            costs_noisy.len()
        )));
    }
    let scores: Vec<f64> = ema_rewards
        .iter()
        .zip(costs_noisy)
        .map(|(r, w)| r - lambda * w)
        .collect();
    softmax_scores(&scores, eta)
}

/// `log w(i) += eta * u(i)`, then re-centred so the largest log-weight is 0.
pub fn exp_weights_update(log_weights: &[f64], utilities: &[f64], eta: f64) -> Vec<f64> {
    let mut out: Vec<f64> = log_weights
        .iter()
        .zip(utilities)
        .map(|(lw, u)| lw + eta * u)
        .collect();
    let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top.is_finite() {
        out.iter_mut().for_each(|lw| *lw -= top);
    }
    out
}

/// The distribution `w / sum(w)` induced by log-weights.
pub fn weights_to_policy(log_weights: &[f64]) -> Result<Vec<f64>> {
    softmax_scores(log_weights, 1.0)
}

/// Inverse-CDF draw from a probability vector.
pub fn select<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Result<usize> {
    if pi.is_empty() || pi.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution("selection vector is not a simplex point".into()));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "selection probabilities sum to {total}"
        )));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, p) in pi.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(i);
        }
    }
    // u landed in the rounding gap above the last cumulative sum.
    Ok(pi.iter().rposition(|p| *p > 0.0).unwrap_or(pi.len() - 1))
}

/// UCB1: unplayed arms first, then `mean + sqrt(2 ln t / n)`; ties go low.
pub fn ucb1_select(means: &[f64], counts: &[u64], t: usize) -> usize {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return i;
    }
    let log_t = (t.max(1) as f64).ln();
    let index: Vec<f64> = means
        .iter()
        .zip(counts)
        .map(|(m, &n)| m + (2.0 * log_t / n as f64).sqrt())
        .collect();
    argmax(&index).unwrap_or(0)
}

fn uses_history(kind: PolicyKind, cfg: &ExperimentConfig) -> bool {
    match kind {
        PolicyKind::BotOrchNoniid => true,
        PolicyKind::NoOt => cfg.environment.is_noniid(),
        _ => false,
    }
}

fn policy_lambda(kind: PolicyKind, cfg: &ExperimentConfig) -> f64 {
    if kind == PolicyKind::NoOt {
        0.0
    } else {
        cfg.lambda
    }
}

/// Chooses this round's agent; returns it with the distribution it was drawn
/// from (a point mass for UCB1).
pub fn policy_step<R: Rng + ?Sized>(
    kind: PolicyKind,
    state: &PolicyState,
    costs_noisy: &[f64],
    cfg: &ExperimentConfig,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    let m = state.num_agents();
    if costs_noisy.len() != m {
        return Err(Error::Shape(format!("{} costs for {m} agents", costs_noisy.len())));
    }
    match kind {
        PolicyKind::Random => {
            let pi = vec![1.0 / m as f64; m];
            let i = select(&pi, rng)?;
            Ok((i, pi))
        }
        PolicyKind::Ucb1 => {
            let i = ucb1_select(&state.running_means, &state.play_counts, state.round + 1);
            let mut pi = vec![0.0; m];
            pi[i] = 1.0;
            Ok((i, pi))
        }
        PolicyKind::BotOrchIid | PolicyKind::BotOrchNoniid | PolicyKind::NoOt => {
            let history = uses_history(kind, cfg);
            let scores: Vec<f64> = (0..m)
                .map(|i| {
                    let ema = state.ema_rewards[i];
                    if history {
                        ema + history_correction(&state.reward_history[i], ema, cfg.beta)
                    } else {
                        ema
                    }
                })
                .collect();
            let eta = eta_at(state.round + 1, cfg);
            let pi = softmax_policy(&scores, costs_noisy, policy_lambda(kind, cfg), eta)?;
            let i = select(&pi, rng)?;
            Ok((i, pi))
        }
    }
}

/// Feeds back the chosen agent's reward (bandit feedback) and paid cost.
pub fn policy_observe(
    kind: PolicyKind,
    state: &mut PolicyState,
    chosen: usize,
    reward: f64,
    cost_noisy: f64,
    cfg: &ExperimentConfig,
) {
    let t = state.round + 1;
    state.play_counts[chosen] += 1;
    let n = state.play_counts[chosen] as f64;
    state.running_means[chosen] += (reward - state.running_means[chosen]) / n;
    state.ema_rewards[chosen] = ema_update(state.ema_rewards[chosen], reward, cfg.alpha);
    let buf = &mut state.reward_history[chosen];
    if buf.len() == state.history_window {
        buf.pop_front();
    }
    buf.push_back(reward);

    if kind != PolicyKind::Ucb1 && kind != PolicyKind::Random {
        let mut utilities = vec![0.0; state.num_agents()];
        utilities[chosen] = reward - policy_lambda(kind, cfg) * cost_noisy;
        state.log_weights = exp_weights_update(&state.log_weights, &utilities, eta_at(t, cfg));
    }
    state.round = t;
}
