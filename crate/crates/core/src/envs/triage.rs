//! Two-agent human/AI triage. Agent 0 is the AI, agent 1 the human.
//!
//! In profile mode each agent is correct on a patient with a probability
//! that depends only on whether the patient is shifted. In dataset mode the
//! AI is a calibrated logistic model on tabular data and the human stays
//! profile-based. The clean alignment cost is the 0-1 transport distance
//! between the true label and the agent's predictive distribution, which is
//! one minus the probability the agent assigns to the true label.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{
    apply_shift, from_table, read_csv, split_sizes, surrogate_table, CalibratedLogistic, CsvSchema,
    ShiftConfig, TrainConfig,
};
use super::{check_round, EnvRound, Environment, RoundMeta, SimRng};
use crate::error::{Error, Result};
use crate::model::{AgentSpec, DiscreteDistribution, Distribution, Task};
use crate::ot::clean_alignment;
use crate::survival::SurvivalModel;

pub const AI: usize = 0;
pub const HUMAN: usize = 1;

/// Probability of a correct call, by agent and patient population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriageAccuracy {
    pub ai_id: f64,
    pub ai_shifted: f64,
    pub human_id: f64,
    pub human_shifted: f64,
}

impl Default for TriageAccuracy {
    fn default() -> Self {
        Self {
            ai_id: 0.982,
            ai_shifted: 0.807,
            human_id: 0.880,
            human_shifted: 0.947,
        }
    }
}

impl TriageAccuracy {
    pub fn get(&self, agent: usize, shifted: bool) -> f64 {
        match (agent, shifted) {
            (AI, false) => self.ai_id,
            (AI, true) => self.ai_shifted,
            (_, false) => self.human_id,
            (_, true) => self.human_shifted,
        }
    }

    /// Clean costs `(AI, human)` for a patient.
    pub fn clean_costs(&self, shifted: bool, label: u8) -> Result<[f64; 2]> {
        Ok([
            label_cost(self.get(AI, shifted), label)?,
            label_cost(self.get(HUMAN, shifted), label)?,
        ])
    }
}

/// `W(delta_label, mu)` under the 0-1 cost where `mu` puts mass `p_correct`
/// on `label` and the rest on the other class.
pub fn label_cost(p_correct: f64, label: u8) -> Result<f64> {
    let label = usize::from(label.min(1));
    let mut masses = [0.0; 2];
    masses[label] = p_correct;
    masses[1 - label] = 1.0 - p_correct;
    clean_alignment(
        &Distribution::Discrete(DiscreteDistribution::new(masses.to_vec())?),
        &Distribution::Discrete(DiscreteDistribution::one_hot(2, label)?),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageMode {
    Profile,
    Dataset,
}

/// Order in which in-distribution and shifted patients arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageSchedule {
    /// Each patient is shifted with probability one half.
    Iid,
    /// In-distribution for rounds `1..=ceil(T/2)`, shifted afterwards.
    Noniid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSource {
    /// CSV file; a surrogate table is generated when absent.
    pub path: Option<PathBuf>,
    pub schema: CsvSchema,
    pub surrogate_rows: usize,
    pub surrogate_features: usize,
    pub surrogate_seed: u64,
    pub shift: ShiftConfig,
    pub train: TrainConfig,
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self {
            path: None,
            schema: CsvSchema::default(),
            surrogate_rows: 569,
            surrogate_features: 30,
            surrogate_seed: 0,
            shift: ShiftConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriageConfig {
    pub mode: TriageMode,
    pub schedule: TriageSchedule,
    pub accuracy: TriageAccuracy,
    /// `(AI, human)` alignment-cost noise scales.
    pub cost_noise_sigmas: [f64; 2],
    pub survival_rates: [f64; 2],
    pub dataset: DatasetSource,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            mode: TriageMode::Profile,
            schedule: TriageSchedule::Noniid,
            accuracy: TriageAccuracy::default(),
            cost_noise_sigmas: [0.0, 0.0],
            survival_rates: [1.5, 0.75],
            dataset: DatasetSource::default(),
        }
    }
}

impl TriageConfig {
    pub fn validate(&self, horizon: usize, num_agents: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if num_agents != 2 {
            return bad(format!("triage has exactly 2 agents, got {num_agents}"));
        }
        let a = self.accuracy;
        if [a.ai_id, a.ai_shifted, a.human_id, a.human_shifted]
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("triage accuracies must lie in [0, 1]".into());
        }
        if self.cost_noise_sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("cost_noise_sigmas must be nonnegative".into());
        }
        for r in self.survival_rates {
            SurvivalModel::exponential(r).validate()?;
        }
        if self.mode == TriageMode::Dataset && self.dataset.path.is_none() {
            check_capacity(self.schedule, split_sizes(self.dataset.surrogate_rows), horizon)?;
        }
        Ok(())
    }
}

fn check_capacity(schedule: TriageSchedule, sizes: [usize; 4], horizon: usize) -> Result<()> {
    let (id, shift) = (sizes[2], sizes[3]);
    let first = horizon.div_ceil(2);
    let ok = match schedule {
        TriageSchedule::Noniid => first <= id && horizon - first <= shift,
        TriageSchedule::Iid => horizon <= id + shift,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{horizon} rounds need more patients than the {id} in-distribution and {shift} shifted test rows"
        )))
    }
}

/// A test patient served in dataset mode.
#[derive(Debug, Clone, PartialEq)]
struct Patient {
    features: Vec<f64>,
    label: u8,
    shifted: bool,
    /// Calibrated AI probability of class 1.
    ai_prob: f64,
}

#[derive(Debug, Clone)]
pub struct TriageEnv {
    cfg: TriageConfig,
    horizon: usize,
    agents: Vec<AgentSpec>,
    patients: Vec<Patient>,
}

impl TriageEnv {
    pub fn new(cfg: &TriageConfig, horizon: usize, num_agents: usize, rng: &mut SimRng) -> Result<Self> {
        cfg.validate(horizon, num_agents)?;
        let agents = ["ai", "human"]
            .iter()
            .enumerate()
            .map(|(k, name)| {
                Ok(AgentSpec {
                    id: k,
                    output_dist: Distribution::Discrete(DiscreteDistribution::uniform(2)?),
                    survival: SurvivalModel::exponential(cfg.survival_rates[k]),
                    cost_noise_sigma: cfg.cost_noise_sigmas[k],
                    label: (*name).to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let patients = match cfg.mode {
            TriageMode::Profile => Vec::new(),
            TriageMode::Dataset => Self::patients(cfg, horizon, rng)?,
        };
        Ok(Self {
            cfg: cfg.clone(),
            horizon,
            agents,
            patients,
        })
    }

    fn patients(cfg: &TriageConfig, horizon: usize, rng: &mut SimRng) -> Result<Vec<Patient>> {
        let src = &cfg.dataset;
        let table = match &src.path {
            Some(p) => read_csv(p, &src.schema)?,
            None => surrogate_table(src.surrogate_rows, src.surrogate_features, src.surrogate_seed)?,
        };
        let ds = from_table(table, rng)?;
        check_capacity(
            cfg.schedule,
            [
                ds.splits.train.len(),
                ds.splits.calibration.len(),
                ds.splits.test_id.len(),
                ds.splits.test_shift.len(),
            ],
            horizon,
        )?;
        let ds = apply_shift(&ds, &src.shift, rng)?;
        let model = CalibratedLogistic::fit(&ds, &ds.splits.train, &ds.splits.calibration, &src.train)?;
        let patient = |i: usize, shifted: bool| Patient {
            features: ds.rows[i].clone(),
            label: ds.labels[i],
            shifted,
            ai_prob: model.predict_proba(&ds.rows[i]),
        };
        let mut id: Vec<Patient> = ds.splits.test_id.iter().map(|&i| patient(i, false)).collect();
        let mut shift: Vec<Patient> = ds.splits.test_shift.iter().map(|&i| patient(i, true)).collect();
        Ok(match cfg.schedule {
            TriageSchedule::Noniid => {
                id.shuffle(rng);
                shift.shuffle(rng);
                let first = horizon.div_ceil(2);
                id.truncate(first);
                shift.truncate(horizon - first);
                id.into_iter().chain(shift).collect()
            }
            TriageSchedule::Iid => {
                let mut all: Vec<Patient> = id.into_iter().chain(shift).collect();
                all.shuffle(rng);
                all.truncate(horizon);
                all
            }
        })
    }

    pub fn config(&self) -> &TriageConfig {
        &self.cfg
    }

    /// Whether round `t` serves a shifted patient under the non-i.i.d. schedule.
    pub fn scheduled_shift(&self, t: usize) -> bool {
        t > self.horizon.div_ceil(2)
    }
}

impl Environment for TriageEnv {
    fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn is_noniid(&self) -> bool {
        self.cfg.schedule == TriageSchedule::Noniid
    }

    fn step(&mut self, t: usize, rng: &mut SimRng) -> Result<EnvRound> {
        check_round(t, self.horizon)?;
        let acc = self.cfg.accuracy;
        let (features, label, shifted, ai_correct_p, ai_correct) = match self.cfg.mode {
            TriageMode::Profile => {
                let shifted = match self.cfg.schedule {
                    TriageSchedule::Noniid => self.scheduled_shift(t),
                    TriageSchedule::Iid => rng.random::<bool>(),
                };
                let label = u8::from(rng.random::<bool>());
                let p = acc.get(AI, shifted);
                let correct = rng.random::<f64>() < p;
                (vec![f64::from(u8::from(shifted))], label, shifted, p, correct)
            }
            TriageMode::Dataset => {
                let pt = &self.patients[t - 1];
                let p = if pt.label == 1 { pt.ai_prob } else { 1.0 - pt.ai_prob };
                let correct = u8::from(pt.ai_prob >= 0.5) == pt.label;
                (pt.features.clone(), pt.label, pt.shifted, p, correct)
            }
        };
        let human_p = acc.get(HUMAN, shifted);
        let human_correct = rng.random::<f64>() < human_p;
        let costs = vec![label_cost(ai_correct_p, label)?, label_cost(human_p, label)?];
        let correct = vec![ai_correct, human_correct];
        Ok(EnvRound {
            task: Task {
                features,
                reference: Distribution::Discrete(DiscreteDistribution::one_hot(2, usize::from(label))?),
                shifted,
                round: t,
            },
            counterfactual_rewards: correct.iter().map(|&c| f64::from(u8::from(c))).collect(),
            counterfactual_costs_clean: costs,
            meta: RoundMeta {
                segment: usize::from(shifted),
                drift_phase: 0.0,
                shifted,
                label: Some(label),
                correct: Some(correct),
            },
        })
    }
}
