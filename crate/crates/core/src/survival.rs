//! Survival models, shared gamma frailty, independent censoring and the
//! frailty-tilted reward `delta * S(T)^theta`.

use rand::Rng;
use rand_distr::{Distribution as _, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalFamily {
    Exponential,
    Weibull,
}

/// Baseline survival `S(tau | x) = exp(-m(x) (rate * tau)^shape)` with
/// task multiplier `m(x) = exp(<task_sensitivity, x>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModel {
    pub family: SurvivalFamily,
    pub base_rate: f64,
    pub shape: f64,
    #[serde(default)]
    pub task_sensitivity: Vec<f64>,
}

impl SurvivalModel {
    pub fn exponential(rate: f64) -> Self {
        Self {
            family: SurvivalFamily::Exponential,
            base_rate: rate,
            shape: 1.0,
            task_sensitivity: Vec::new(),
        }
    }

    pub fn weibull(rate: f64, shape: f64) -> Self {
        Self {
            family: SurvivalFamily::Weibull,
            base_rate: rate,
            shape,
            task_sensitivity: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return Err(Error::InvalidConfig("survival base_rate must be positive".into()));
        }
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::InvalidConfig("survival shape must be positive".into()));
        }
        Ok(())
    }

    fn effective_shape(&self) -> f64 {
        match self.family {
            SurvivalFamily::Exponential => 1.0,
            SurvivalFamily::Weibull => self.shape,
        }
    }

    /// `exp(<w, x>)`; features beyond the sensitivity vector are ignored.
    pub fn rate_multiplier(&self, features: &[f64]) -> f64 {
        self.task_sensitivity
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            .exp()
    }

    pub fn cumulative_hazard(&self, tau: f64, features: &[f64]) -> f64 {
        self.rate_multiplier(features) * (self.base_rate * tau).powf(self.effective_shape())
    }

    /// Time at which the cumulative hazard reaches `h`.
    fn time_at_hazard(&self, h: f64, features: &[f64]) -> f64 {
        (h / self.rate_multiplier(features)).powf(1.0 / self.effective_shape()) / self.base_rate
    }
}

/// `P(T > tau | x)` under the baseline model.
pub fn survival_prob(model: &SurvivalModel, tau: f64, features: &[f64]) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("tau must be >= 0, got {tau}")));
    }
    Ok((-model.cumulative_hazard(tau, features)).exp().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrailtyKind {
    /// `Gamma(k, 1/k)`, mean one and variance `1/k`.
    Gamma,
    /// Always one.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrailtyConfig {
    pub shape_k: f64,
    pub kind: FrailtyKind,
}

pub fn sample_frailty<R: Rng + ?Sized>(cfg: &FrailtyConfig, rng: &mut R) -> f64 {
    match cfg.kind {
        FrailtyKind::Degenerate => 1.0,
        FrailtyKind::Gamma => Gamma::new(cfg.shape_k, 1.0 / cfg.shape_k)
            .expect("frailty shape validated positive")
            .sample(rng),
    }
}

/// Independent right-censoring mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringConfig {
    /// Censoring time `C ~ Exp(rate)`.
    Exponential { rate: f64 },
    /// Fixed administrative cap; `inf` disables censoring.
    Administrative { horizon_cap: f64 },
}

impl CensoringConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CensoringConfig::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            CensoringConfig::Administrative { horizon_cap } => horizon_cap > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "censoring rate or horizon_cap must be positive".into(),
            ))
        }
    }
}

/// One simulated completion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalEvent {
    /// `min(T, C)`.
    pub t_obs: f64,
    /// Whether the completion was observed (`T <= C`).
    pub delta: bool,
    /// Baseline survival at the latent event time, `S(T | x)`.
    pub s_at_t: f64,
    pub event_time: f64,
}

/// Draws `T` from `S^theta` by inversion and an independent censoring time.
pub fn sample_event<R: Rng + ?Sized>(
    model: &SurvivalModel,
    features: &[f64],
    theta: f64,
    cens: &CensoringConfig,
    rng: &mut R,
) -> SurvivalEvent {
    // U in (0, 1] keeps -ln U finite.
    let u = 1.0 - rng.random::<f64>();
    let event_time = model.time_at_hazard(-u.ln() / theta, features);
    let censor_time = match *cens {
        CensoringConfig::Exponential { rate } => -(1.0 - rng.random::<f64>()).ln() / rate,
        CensoringConfig::Administrative { horizon_cap } => horizon_cap,
    };
    let delta = event_time <= censor_time;
    SurvivalEvent {
        t_obs: event_time.min(censor_time),
        delta,
        s_at_t: (-model.cumulative_hazard(event_time, features)).exp(),
        event_time,
    }
}

pub fn frailty_reward(delta: bool, s_at_t: f64, theta: f64) -> f64 {
    if delta {
        s_at_t.clamp(0.0, 1.0).powf(theta)
    } else {
        0.0
    }
}
