//! Task/reward environments.
//!
//! Five synthetic generators (two stationary, three non-stationary) share one
//! implementation in [`synthetic`]; the two-agent human/AI triage simulator
//! lives in [`triage`], with CSV ingestion and the surrogate dataset in
//! [`dataset`]. Every environment produces the full counterfactual round:
//! all agents' rewards and clean alignment costs. The harness decides what
//! the learner gets to see.

pub mod dataset;
pub mod synthetic;
pub mod triage;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentSpec, Task};

pub use dataset::{
    apply_shift, gen_surrogate_dataset, load_csv, read_csv, split_sizes, surrogate_table,
    CalibratedLogistic, CsvSchema, Dataset, RawTable, ShiftConfig, Splits, TrainConfig,
};
pub use synthetic::{brownian_bridge, half_moon_point, SyntheticEnv};
pub use triage::{TriageAccuracy, TriageConfig, TriageEnv, TriageMode, TriageSchedule};

/// Random stream used by environments and the harness.
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    IidG,
    IidM,
    NoniidPs,
    NoniidSd,
    NoniidBb,
    Triage,
}

impl EnvKind {
    pub const SYNTHETIC: [EnvKind; 5] = [
        EnvKind::IidG,
        EnvKind::IidM,
        EnvKind::NoniidPs,
        EnvKind::NoniidSd,
        EnvKind::NoniidBb,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::IidG => "iid_g",
            EnvKind::IidM => "iid_m",
            EnvKind::NoniidPs => "noniid_ps",
            EnvKind::NoniidSd => "noniid_sd",
            EnvKind::NoniidBb => "noniid_bb",
            EnvKind::Triage => "triage",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::SYNTHETIC
            .into_iter()
            .chain([EnvKind::Triage])
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown environment '{s}'")))
    }
}

/// How the task reference distribution is obtained each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// The environment's true reference for the current regime.
    Oracle,
    /// Sliding-window barycenter of sampled task distributions.
    Sliding,
}

/// Environment parameters. Empty vectors and `None` fields are filled with
/// per-kind defaults sized to the agent count when the environment is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub feature_dim: usize,
    /// Per-agent base reward mean.
    pub reward_means: Vec<f64>,
    /// Per-agent reward standard deviation.
    pub reward_stds: Vec<f64>,
    /// Common-factor correlation of the Gaussian reward noise across agents.
    pub reward_correlation: f64,
    /// Agent outcome distributions `N(mean, std)`, discretized to `output_atoms` quantiles.
    pub output_means: Vec<f64>,
    pub output_stds: Vec<f64>,
    pub output_atoms: usize,
    /// Per-regime reference distributions `N(mean, std)`.
    pub reference_means: Vec<f64>,
    pub reference_stds: Vec<f64>,
    pub reference_mode: ReferenceMode,
    pub reference_window: usize,
    /// Exponential window weighting; uniform when absent.
    pub reference_gamma: Option<f64>,
    pub reference_sample_size: usize,
    pub barycenter_grid: usize,
    pub cost_noise_sigmas: Vec<f64>,
    /// Exponential survival rate per agent.
    pub survival_rates: Vec<f64>,
    /// Weibull shape per agent; exponential when empty.
    pub survival_shapes: Vec<f64>,
    // iid_m
    pub moon_noise: f64,
    pub mixture_means: Vec<[f64; 2]>,
    pub mixture_stds: Vec<[f64; 2]>,
    /// Probability of the first mixture component, per agent.
    pub mixture_weights: Vec<f64>,
    // noniid_ps
    pub changepoints: Option<Vec<usize>>,
    /// `segment_stds[segment][agent]`.
    pub segment_stds: Vec<Vec<f64>>,
    // noniid_sd
    pub drift_amplitudes: Vec<f64>,
    pub drift_phases: Vec<f64>,
    pub drift_period: Option<f64>,
    // noniid_bb
    pub bridge_starts: Vec<f64>,
    pub bridge_ends: Vec<f64>,
    pub bridge_volatility: f64,
    pub triage: TriageConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::IidG,
            feature_dim: 2,
            reward_means: Vec::new(),
            reward_stds: Vec::new(),
            reward_correlation: 0.0,
            output_means: Vec::new(),
            output_stds: Vec::new(),
            output_atoms: 64,
            reference_means: Vec::new(),
            reference_stds: Vec::new(),
            reference_mode: ReferenceMode::Oracle,
            reference_window: 20,
            reference_gamma: None,
            reference_sample_size: 32,
            barycenter_grid: crate::ot::DEFAULT_GRID,
            cost_noise_sigmas: Vec::new(),
            survival_rates: Vec::new(),
            survival_shapes: Vec::new(),
            moon_noise: 0.1,
            mixture_means: Vec::new(),
            mixture_stds: Vec::new(),
            mixture_weights: Vec::new(),
            changepoints: None,
            segment_stds: Vec::new(),
            drift_amplitudes: Vec::new(),
            drift_phases: Vec::new(),
            drift_period: None,
            bridge_starts: Vec::new(),
            bridge_ends: Vec::new(),
            bridge_volatility: 0.01,
            triage: TriageConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn for_kind(kind: EnvKind) -> Self {
        Self { kind, ..Self::default() }
    }

    /// Whether the matching learner is the history-corrected variant.
    pub fn is_noniid(&self) -> bool {
        match self.kind {
            EnvKind::IidG | EnvKind::IidM => false,
            EnvKind::NoniidPs | EnvKind::NoniidSd | EnvKind::NoniidBb => true,
            EnvKind::Triage => self.triage.schedule == TriageSchedule::Noniid,
        }
    }

    pub fn validate(&self, horizon: usize, num_agents: usize) -> Result<()> {
        match self.kind {
            EnvKind::Triage => self.triage.validate(horizon, num_agents),
            _ => synthetic::SyntheticParams::resolve(self, horizon, num_agents).map(|_| ()),
        }
    }
}

/// Per-round environment annotations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundMeta {
    pub segment: usize,
    pub drift_phase: f64,
    pub shifted: bool,
    pub label: Option<u8>,
    /// Per-agent correctness (triage only).
    pub correct: Option<Vec<bool>>,
}

/// The full counterfactual outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRound {
    pub task: Task,
    pub counterfactual_rewards: Vec<f64>,
    pub counterfactual_costs_clean: Vec<f64>,
    pub meta: RoundMeta,
}

pub trait Environment: Send {
    fn agents(&self) -> &[AgentSpec];
    fn horizon(&self) -> usize;
    fn is_noniid(&self) -> bool;
    /// Produces round `t` (1-based).
    fn step(&mut self, t: usize, rng: &mut SimRng) -> Result<EnvRound>;

    fn num_agents(&self) -> usize {
        self.agents().len()
    }
}

pub(crate) fn check_round(t: usize, horizon: usize) -> Result<()> {
    if t == 0 || t > horizon {
        Err(Error::InvalidRound { round: t, horizon })
    } else {
        Ok(())
    }
}

/// Builds the configured environment. Construction may consume `rng`
/// (latent bridge paths, dataset splits).
pub fn build_env(
    cfg: &EnvConfig,
    horizon: usize,
    num_agents: usize,
    rng: &mut SimRng,
) -> Result<Box<dyn Environment>> {
    match cfg.kind {
        EnvKind::Triage => Ok(Box::new(TriageEnv::new(&cfg.triage, horizon, num_agents, rng)?)),
        _ => Ok(Box::new(SyntheticEnv::new(cfg, horizon, num_agents, rng)?)),
    }
}
