//! Core value types shared by every other module.
//!
//! Everything here is immutable after construction. Environments build a
//! fresh [`Task`] each round and the harness emits one [`RoundRecord`] per
//! round; the learner itself only ever sees the chosen agent's entries.

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::survival::{CensoringConfig, FrailtyConfig, FrailtyKind, SurvivalModel};

/// Upper bound on every reward the simulator produces.
pub const R_MAX: f64 = 1.0;

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-12;

/// Probability mass on a finite, index-labelled support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    /// Wraps masses that already sum to one.
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        check_masses(&masses)?;
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { masses })
    }

    /// Point mass on `index` of a support with `size` atoms.
    pub fn one_hot(size: usize, index: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::InvalidDistribution(format!(
                "one-hot index {index} outside support of size {size}"
            )));
        }
        let mut masses = vec![0.0; size];
        masses[index] = 1.0;
        Ok(Self { masses })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        normalize(&vec![1.0; size])
    }

    pub fn support_size(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn check_masses(masses: &[f64]) -> Result<()> {
    if masses.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if let Some(bad) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "mass {bad} is negative or not finite"
        )));
    }
    Ok(())
}

/// Rescales nonnegative masses onto the probability simplex.
pub fn normalize(masses: &[f64]) -> Result<DiscreteDistribution> {
    check_masses(masses)?;
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidDistribution(
            "at least one mass must be strictly positive".into(),
        ));
    }
    let mut out: Vec<f64> = masses.iter().map(|m| m / total).collect();
    // Push the rounding residue onto the largest atom so the sum is 1 to the ulp.
    let residue = 1.0 - out.iter().sum::<f64>();
    if let Some(imax) = argmax(&out) {
        out[imax] += residue;
    }
    Ok(DiscreteDistribution { masses: out })
}

/// Weighted real samples, sorted ascending on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution1D {
    samples: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDistribution1D {
    /// Builds an empirical measure. Absent weights mean uniform; supplied
    /// weights must be nonnegative with a positive total and are rescaled to
    /// sum to one.
    pub fn new(samples: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidDistribution("no samples".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite sample".into()));
        }
        let n = samples.len();
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::Shape(format!(
                        "{} weights for {} samples",
                        w.len(),
                        n
                    )));
                }
                normalize(&w)?.masses
            }
        };
        let mut pairs: Vec<(f64, f64)> = samples.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (samples, weights) = pairs.into_iter().unzip();
        Ok(Self { samples, weights })
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(vec![x], None)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum()
    }

    /// Generalized inverse `inf { x : F(x) >= u }` for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut cum = 0.0;
        for (x, w) in self.samples.iter().zip(&self.weights) {
            cum += w;
            if cum >= u {
                return *x;
            }
        }
        *self.samples.last().expect("nonempty by construction")
    }
}

/// An outcome distribution: either on a labelled finite support or on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Discrete(DiscreteDistribution),
    Empirical(EmpiricalDistribution1D),
}

/// One incoming task and the reference outcome distribution it asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub features: Vec<f64>,
    pub reference: Distribution,
    pub shifted: bool,
    pub round: usize,
}

/// A candidate executor.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: usize,
    pub output_dist: Distribution,
    pub survival: SurvivalModel,
    pub cost_noise_sigma: f64,
    pub label: String,
}

/// Checks that agent ids are `0..M` in order and noise scales are valid.
pub fn validate_agents(agents: &[AgentSpec]) -> Result<()> {
    for (i, a) in agents.iter().enumerate() {
        if a.id != i {
            return Err(Error::InvalidConfig(format!(
                "agent at position {i} has id {}",
                a.id
            )));
        }
        if !(a.cost_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "agent {i}: cost_noise_sigma must be >= 0"
            )));
        }
    }
    Ok(())
}

/// Everything the simulator knows about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub chosen: usize,
    pub reward_chosen: f64,
    pub cost_chosen_noisy: f64,
    pub counterfactual_rewards: Vec<f64>,
    pub counterfactual_costs_clean: Vec<f64>,
    pub counterfactual_costs_noisy: Vec<f64>,
    pub censored: bool,
    pub observed_time: f64,
    pub correct: Option<bool>,
    pub shifted: bool,
    pub frailty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordViolation {
    VectorLength { field: &'static str, len: usize },
    ChosenOutOfRange(usize),
    ChosenRewardMismatch { recorded: f64, counterfactual: f64 },
    ChosenCostMismatch { recorded: f64, counterfactual: f64 },
    RewardOutOfBounds { agent: usize, value: f64 },
    NegativeObservedTime(f64),
    NonPositiveFrailty(f64),
}

/// Lists every invariant a record breaks; `Ok` iff there are none.
pub fn validate_record(
    r: &RoundRecord,
    num_agents: usize,
) -> std::result::Result<(), Vec<RecordViolation>> {
    let mut out = Vec::new();
    for (field, len) in [
        ("counterfactual_rewards", r.counterfactual_rewards.len()),
        ("counterfactual_costs_clean", r.counterfactual_costs_clean.len()),
        ("counterfactual_costs_noisy", r.counterfactual_costs_noisy.len()),
    ] {
        if len != num_agents {
            out.push(RecordViolation::VectorLength { field, len });
        }
    }
    if r.chosen >= num_agents {
        out.push(RecordViolation::ChosenOutOfRange(r.chosen));
    }
    if let Some(&cf) = r.counterfactual_rewards.get(r.chosen) {
        if cf != r.reward_chosen {
            out.push(RecordViolation::ChosenRewardMismatch {
                recorded: r.reward_chosen,
                counterfactual: cf,
            });
        }
    }
    if let Some(&cf) = r.counterfactual_costs_noisy.get(r.chosen) {
        if cf != r.cost_chosen_noisy {
            out.push(RecordViolation::ChosenCostMismatch {
                recorded: r.cost_chosen_noisy,
                counterfactual: cf,
            });
        }
    }
    if !(0.0..=R_MAX).contains(&r.reward_chosen) {
        out.push(RecordViolation::RewardOutOfBounds {
            agent: r.chosen,
            value: r.reward_chosen,
        });
    }
    for (agent, &value) in r.counterfactual_rewards.iter().enumerate() {
        if !(0.0..=R_MAX).contains(&value) && agent != r.chosen {
            out.push(RecordViolation::RewardOutOfBounds { agent, value });
        }
    }
    if !(r.observed_time >= 0.0) {
        out.push(RecordViolation::NegativeObservedTime(r.observed_time));
    }
    if !(r.frailty > 0.0) {
        out.push(RecordViolation::NonPositiveFrailty(r.frailty));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    Constant,
    InverseSqrt,
}

/// Where the per-round rewards come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// The environment's own reward draw (Gaussian families, triage correctness).
    Env,
    /// `delta * S(T)^theta` from each agent's survival model under shared frailty.
    Survival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    StudentT,
    Normal,
}

/// Resolved parameters of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lambda: f64,
    /// Penalty used when scoring trajectories; defaults to `lambda`.
    pub lambda_eval: Option<f64>,
    pub alpha: f64,
    pub eta0: f64,
    pub eta_schedule: EtaSchedule,
    pub beta: f64,
    pub history_window: usize,
    pub horizon: usize,
    pub num_agents: usize,
    pub seeds: Vec<u64>,
    pub environment: EnvConfig,
    pub frailty_shape: f64,
    pub frailty: FrailtyKind,
    pub censoring: CensoringConfig,
    pub reward_source: RewardSource,
    pub oracle_uses_clean_costs: bool,
    pub ci_method: CiMethod,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_eval: None,
            alpha: 0.9,
            eta0: 5.0,
            eta_schedule: EtaSchedule::Constant,
            beta: 0.05,
            history_window: 20,
            horizon: 200,
            num_agents: 4,
            seeds: vec![1, 2, 3, 4, 5],
            environment: EnvConfig::default(),
            frailty_shape: 1.0,
            frailty: FrailtyKind::Gamma,
            censoring: CensoringConfig::Exponential { rate: 0.5 },
            reward_source: RewardSource::Env,
            oracle_uses_clean_costs: false,
            ci_method: CiMethod::StudentT,
        }
    }
}

impl ExperimentConfig {
    pub fn eval_lambda(&self) -> f64 {
        self.lambda_eval.unwrap_or(self.lambda)
    }

    pub fn frailty_config(&self) -> FrailtyConfig {
        FrailtyConfig {
            shape_k: self.frailty_shape,
            kind: self.frailty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite nonnegative real");
        }
        if let Some(l) = self.lambda_eval {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("lambda_eval must be a finite nonnegative real");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad("eta0 must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if self.history_window == 0 {
            return bad("history_window must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.num_agents == 0 {
            return bad("num_agents must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if !(self.frailty_shape > 0.0) {
            return bad("frailty_shape must be positive");
        }
        self.censoring.validate()?;
        self.environment.validate(self.horizon, self.num_agents)
    }
}

/// Lowest index attaining the maximum; `None` for an empty slice.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record() -> RoundRecord {
        RoundRecord {
            round: 1,
            chosen: 1,
            reward_chosen: 0.4,
            cost_chosen_noisy: 0.2,
            counterfactual_rewards: vec![0.9, 0.4],
            counterfactual_costs_clean: vec![0.1, 0.25],
            counterfactual_costs_noisy: vec![0.05, 0.2],
            censored: false,
            observed_time: 1.5,
            correct: None,
            shifted: false,
            frailty: 1.0,
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().masses(), &[0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().masses(), &[1.0, 0.0, 0.0]);
        assert_eq!(normalize(&[1.0, 3.0]).unwrap().masses(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_rejects_degenerate_input() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::InvalidDistribution(_))));
        assert!(matches!(normalize(&[1.0, -0.5]), Err(Error::InvalidDistribution(_))));
        assert!(normalize(&[]).is_err());
    }

    #[test]
    fn discrete_new_checks_total() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDistribution::new(vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn empirical_sorts_and_keeps_weights_paired() {
        let d = EmpiricalDistribution1D::new(vec![3.0, 1.0, 2.0], Some(vec![0.5, 0.25, 0.25]))
            .unwrap();
        assert_eq!(d.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.weights(), &[0.25, 0.25, 0.5]);
        assert_eq!(d.quantile(0.25), 1.0);
        assert_eq!(d.quantile(0.26), 2.0);
        assert_eq!(d.quantile(1.0), 3.0);
        assert!(EmpiricalDistribution1D::new(vec![], None).is_err());
    }

    #[test]
    fn consistent_record_is_ok() {
        assert_eq!(validate_record(&record(), 2), Ok(()));
    }

    #[test]
    fn chosen_reward_mismatch_is_flagged() {
        let mut r = record();
        r.reward_chosen = 0.5;
        let v = validate_record(&r, 2).unwrap_err();
        assert!(v
            .iter()
            .any(|x| matches!(x, RecordViolation::ChosenRewardMismatch { .. })));
    }

    #[test]
    fn reward_above_bound_is_flagged() {
        let mut r = record();
        r.reward_chosen = 1.5;
        r.counterfactual_rewards[1] = 1.5;
        let v = validate_record(&r, 2).unwrap_err();
        assert_eq!(
            v,
            vec![RecordViolation::RewardOutOfBounds { agent: 1, value: 1.5 }]
        );
    }

    #[test]
    fn wrong_agent_count_is_flagged() {
        let v = validate_record(&record(), 3).unwrap_err();
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn normalized_masses_sum_to_one(masses in prop::collection::vec(0.0f64..1e6, 1..40)) {
            prop_assume!(masses.iter().any(|m| *m > 0.0));
            let d = normalize(&masses).unwrap();
            let total: f64 = d.masses().iter().sum();
            prop_assert!((total - 1.0).abs() <= MASS_TOL);
            prop_assert!(d.masses().iter().all(|m| *m >= 0.0));
        }
    }
}
