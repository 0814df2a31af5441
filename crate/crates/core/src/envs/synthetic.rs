//! The five synthetic environments: Gaussian and half-moon/mixture i.i.d.
//! streams, piecewise-stationary variance shifts, sinusoidal mean drift and
//! Brownian-bridge mean paths.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_round, EnvConfig, EnvKind, EnvRound, Environment, ReferenceMode, RoundMeta, SimRng};
use crate::error::{Error, Result};
use crate::model::{AgentSpec, Distribution, EmpiricalDistribution1D, Task};
use crate::ot::{clean_alignment, sliding_reference, WindowWeighting};
use crate::survival::SurvivalModel;

/// `N(mean, std)` represented by its quantiles at `atoms` midpoint levels.
pub fn discretized_normal(mean: f64, std: f64, atoms: usize) -> Result<EmpiricalDistribution1D> {
    if atoms == 0 {
        return Err(Error::InvalidConfig("output_atoms must be positive".into()));
    }
    if std == 0.0 {
        return EmpiricalDistribution1D::point_mass(mean);
    }
    let normal = Normal::new(mean, std)
        .map_err(|e| Error::InvalidConfig(format!("normal({mean}, {std}): {e}")))?;
    let xs = (0..atoms)
        .map(|j| normal.inverse_cdf((j as f64 + 0.5) / atoms as f64))
        .collect();
    EmpiricalDistribution1D::new(xs, None)
}

/// A point on one of the two interleaved unit half-circles, the second
/// flipped and offset by `(1, 0.5)`, plus isotropic Gaussian noise.
pub fn half_moon_point<R: Rng + ?Sized>(noise: f64, rng: &mut R) -> [f64; 2] {
    let upper = rng.random::<bool>();
    let theta = rng.random::<f64>() * PI;
    let (x, y) = if upper {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    };
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    [x + noise * nx, y + noise * ny]
}

/// Brownian bridge on `len` grid points pinned at `start` and `end`, built by
/// recursive midpoint conditioning: given values at `a < b`, the midpoint is
/// Gaussian with the linear-interpolation mean and variance
/// `vol^2 (m - a)(b - m) / (b - a)`.
pub fn brownian_bridge<R: Rng + ?Sized>(
    start: f64,
    end: f64,
    len: usize,
    vol: f64,
    rng: &mut R,
) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut path = vec![0.0; len];
    path[0] = start;
    if len == 1 {
        return path;
    }
    path[len - 1] = end;
    let mut stack = vec![(0usize, len - 1)];
    while let Some((a, b)) = stack.pop() {
        if b - a < 2 {
            continue;
        }
        let m = (a + b) / 2;
        let (fa, fm, fb) = (a as f64, m as f64, b as f64);
        let mean = path[a] + (path[b] - path[a]) * (fm - fa) / (fb - fa);
        let var = vol * vol * (fm - fa) * (fb - fm) / (fb - fa);
        let z: f64 = rng.sample(StandardNormal);
        path[m] = mean + var.sqrt() * z;
        stack.push((m, b));
        stack.push((a, m));
    }
    path
}

/// Per-agent two-component mixture for the half-moon environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureAgent {
    pub means: [f64; 2],
    pub stds: [f64; 2],
    /// Probability of the first component.
    pub weight: f64,
}

impl MixtureAgent {
    pub fn mean(&self) -> f64 {
        self.weight * self.means[0] + (1.0 - self.weight) * self.means[1]
    }
}

const DEFAULT_MIXTURES: [MixtureAgent; 4] = [
    MixtureAgent { means: [0.5, 0.5], stds: [0.1, 0.1], weight: 1.0 },
    MixtureAgent { means: [0.3, 0.7], stds: [0.05, 0.05], weight: 0.5 },
    MixtureAgent { means: [0.4, 0.8], stds: [0.1, 0.1], weight: 0.75 },
    MixtureAgent { means: [0.5, 0.5], stds: [0.25, 0.25], weight: 1.0 },
];

/// [`EnvConfig`] with every default filled in and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub kind: EnvKind,
    pub horizon: usize,
    pub feature_dim: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub correlation: f64,
    pub output_means: Vec<f64>,
    pub output_stds: Vec<f64>,
    pub output_atoms: usize,
    /// Reference `(mean, std)` per segment.
    pub references: Vec<(f64, f64)>,
    pub reference_mode: ReferenceMode,
    pub reference_window: usize,
    pub weighting: WindowWeighting,
    pub reference_sample_size: usize,
    pub grid: usize,
    pub cost_noise_sigmas: Vec<f64>,
    pub survival: Vec<SurvivalModel>,
    pub moon_noise: f64,
    pub mixtures: Vec<MixtureAgent>,
    pub changepoints: Vec<usize>,
    pub segment_stds: Vec<Vec<f64>>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub period: f64,
    pub bridge_starts: Vec<f64>,
    pub bridge_ends: Vec<f64>,
    pub volatility: f64,
}

fn per_agent(name: &str, given: &[f64], m: usize, default: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
    if given.is_empty() {
        Ok((0..m).map(default).collect())
    } else if given.len() == m {
        Ok(given.to_vec())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} has {} entries for {m} agents",
            given.len()
        )))
    }
}

fn spread(k: usize, m: usize) -> f64 {
    if m <= 1 {
        0.0
    } else {
        k as f64 / (m - 1) as f64
    }
}

fn require(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg.into()))
    }
}

impl SyntheticParams {
    pub fn resolve(cfg: &EnvConfig, horizon: usize, m: usize) -> Result<Self> {
        require(cfg.kind != EnvKind::Triage, "triage is not a synthetic environment")?;
        require(m >= 1, "at least one agent is required")?;
        require(horizon >= 1, "horizon must be at least 1")?;
        require(cfg.feature_dim >= 1, "feature_dim must be at least 1")?;
        let finite_nonneg = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x >= 0.0);

        let means = per_agent("reward_means", &cfg.reward_means, m, |_| 0.5)?;
        let stds = per_agent("reward_stds", &cfg.reward_stds, m, |k| 0.1 + 0.05 * k as f64)?;
        require(finite_nonneg(&stds), "reward_stds must be finite and nonnegative")?;
        require(
            means.iter().all(|x| (0.0..=1.0).contains(x)),
            "reward_means must lie in [0, 1]",
        )?;
        require(
            (0.0..=1.0).contains(&cfg.reward_correlation),
            "reward_correlation must lie in [0, 1]",
        )?;

        let output_means = per_agent("output_means", &cfg.output_means, m, |k| {
            let step = k.div_ceil(2) as f64 * 0.08;
            if k % 2 == 1 {
                0.5 + step
            } else {
                0.5 - step
            }
        })?;
        let output_stds = per_agent("output_stds", &cfg.output_stds, m, |k| 0.1 + 0.03 * k as f64)?;
        require(finite_nonneg(&output_stds), "output_stds must be finite and nonnegative")?;

        let changepoints = match (&cfg.changepoints, cfg.kind) {
            (Some(cps), EnvKind::NoniidPs) => cps.clone(),
            (None, EnvKind::NoniidPs) => {
                let mut cps = vec![horizon / 3, 2 * horizon / 3];
                cps.retain(|&c| c > 1 && c < horizon);
                cps.dedup();
                cps
            }
            _ => Vec::new(),
        };
        if cfg.kind == EnvKind::NoniidPs {
            require(
                changepoints.windows(2).all(|w| w[0] < w[1])
                    && changepoints.iter().all(|&c| c > 1 && c < horizon),
                "changepoints must be strictly increasing within (1, T)",
            )?;
        }
        let segments = if cfg.kind == EnvKind::NoniidPs {
            changepoints.len() + 1
        } else {
            1
        };

        let ref_means = if cfg.reference_means.is_empty() {
            if cfg.kind == EnvKind::NoniidPs {
                vec![0.5, 0.6, 0.4]
            } else {
                vec![0.5]
            }
        } else {
            cfg.reference_means.clone()
        };
        let ref_stds = if cfg.reference_stds.is_empty() {
            vec![0.1]
        } else {
            cfg.reference_stds.clone()
        };
        require(finite_nonneg(&ref_stds), "reference_stds must be finite and nonnegative")?;
        let references = (0..segments)
            .map(|s| (ref_means[s % ref_means.len()], ref_stds[s % ref_stds.len()]))
            .collect();

        let segment_stds = if cfg.kind != EnvKind::NoniidPs {
            vec![stds.clone()]
        } else if cfg.segment_stds.is_empty() {
            (0..segments)
                .map(|s| (0..m).map(|k| stds[(k + s) % m]).collect())
                .collect()
        } else {
            require(
                cfg.segment_stds.len() == segments && cfg.segment_stds.iter().all(|r| r.len() == m),
                format!("segment_stds must be a {segments} x {m} table"),
            )?;
            require(
                cfg.segment_stds.iter().all(|r| finite_nonneg(r)),
                "segment_stds must be finite and nonnegative",
            )?;
            cfg.segment_stds.clone()
        };

        let amplitudes = per_agent("drift_amplitudes", &cfg.drift_amplitudes, m, |_| 0.1)?;
        let phases = per_agent("drift_phases", &cfg.drift_phases, m, |k| {
            2.0 * PI * k as f64 / m as f64
        })?;
        let period = cfg.drift_period.unwrap_or(horizon as f64 / 2.0);
        if cfg.kind == EnvKind::NoniidSd {
            require(period > 0.0 && period.is_finite(), "drift_period must be positive")?;
            require(finite_nonneg(&amplitudes), "drift_amplitudes must be nonnegative")?;
            for (k, (b, a)) in means.iter().zip(&amplitudes).enumerate() {
                require(
                    b - a >= 0.0 && b + a <= 1.0,
                    format!("agent {k}: mean {b} +/- amplitude {a} leaves [0, 1]"),
                )?;
            }
        }

        let bridge_starts = per_agent("bridge_starts", &cfg.bridge_starts, m, |k| {
            0.3 + 0.4 * spread(k, m)
        })?;
        let bridge_ends = per_agent("bridge_ends", &cfg.bridge_ends, m, |k| 0.7 - 0.4 * spread(k, m))?;
        if cfg.kind == EnvKind::NoniidBb {
            require(
                bridge_starts.iter().chain(&bridge_ends).all(|x| (0.0..=1.0).contains(x)),
                "bridge endpoints must lie in [0, 1]",
            )?;
            require(
                cfg.bridge_volatility >= 0.0 && cfg.bridge_volatility.is_finite(),
                "bridge_volatility must be nonnegative",
            )?;
        }

        let mixtures: Vec<MixtureAgent> = if cfg.mixture_means.is_empty()
            && cfg.mixture_stds.is_empty()
            && cfg.mixture_weights.is_empty()
        {
            (0..m).map(|k| DEFAULT_MIXTURES[k % DEFAULT_MIXTURES.len()]).collect()
        } else {
            require(
                cfg.mixture_means.len() == m && cfg.mixture_stds.len() == m && cfg.mixture_weights.len() == m,
                "mixture_means, mixture_stds and mixture_weights need one entry per agent",
            )?;
            (0..m)
                .map(|k| MixtureAgent {
                    means: cfg.mixture_means[k],
                    stds: cfg.mixture_stds[k],
                    weight: cfg.mixture_weights[k],
                })
                .collect()
        };
        if cfg.kind == EnvKind::IidM {
            require(cfg.moon_noise >= 0.0, "moon_noise must be nonnegative")?;
            require(
                mixtures
                    .iter()
                    .all(|x| (0.0..=1.0).contains(&x.weight) && finite_nonneg(&x.stds)),
                "mixture weights must lie in [0, 1] and stds be nonnegative",
            )?;
        }

        let cost_noise_sigmas = per_agent("cost_noise_sigmas", &cfg.cost_noise_sigmas, m, |_| 0.05)?;
        require(finite_nonneg(&cost_noise_sigmas), "cost_noise_sigmas must be nonnegative")?;
        let rates = per_agent("survival_rates", &cfg.survival_rates, m, |k| 1.5 - 0.75 * spread(k, m))?;
        let survival = if cfg.survival_shapes.is_empty() {
            rates.iter().map(|&r| SurvivalModel::exponential(r)).collect::<Vec<_>>()
        } else {
            let shapes = per_agent("survival_shapes", &cfg.survival_shapes, m, |_| 1.0)?;
            rates
                .iter()
                .zip(&shapes)
                .map(|(&r, &s)| SurvivalModel::weibull(r, s))
                .collect()
        };
        for s in &survival {
            s.validate()?;
        }

        let weighting = match cfg.reference_gamma {
            Some(gamma) => {
                require(gamma > 0.0 && gamma <= 1.0, "reference_gamma must lie in (0, 1]")?;
                WindowWeighting::Exponential { gamma }
            }
            None => WindowWeighting::Uniform,
        };
        require(cfg.reference_window >= 1, "reference_window must be positive")?;
        require(cfg.reference_sample_size >= 1, "reference_sample_size must be positive")?;
        require(cfg.barycenter_grid >= 1, "barycenter_grid must be positive")?;
        require(cfg.output_atoms >= 1, "output_atoms must be positive")?;

        Ok(Self {
            kind: cfg.kind,
            horizon,
            feature_dim: if cfg.kind == EnvKind::IidM { 2 } else { cfg.feature_dim },
            means,
            stds,
            correlation: cfg.reward_correlation,
            output_means,
            output_stds,
            output_atoms: cfg.output_atoms,
            references,
            reference_mode: cfg.reference_mode,
            reference_window: cfg.reference_window,
            weighting,
            reference_sample_size: cfg.reference_sample_size,
            grid: cfg.barycenter_grid,
            cost_noise_sigmas,
            survival,
            moon_noise: cfg.moon_noise,
            mixtures,
            changepoints,
            segment_stds,
            amplitudes,
            phases,
            period,
            bridge_starts,
            bridge_ends,
            volatility: cfg.bridge_volatility,
        })
    }

    /// Regime index of round `t`: changepoint `c` opens a new segment at round `c`.
    pub fn segment(&self, t: usize) -> usize {
        self.changepoints.iter().filter(|&&c| t >= c).count()
    }

    pub fn drift_mean(&self, agent: usize, t: usize) -> f64 {
        self.means[agent]
            + self.amplitudes[agent] * (2.0 * PI * t as f64 / self.period + self.phases[agent]).sin()
    }
}

/// State of one synthetic episode.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    params: SyntheticParams,
    agents: Vec<AgentSpec>,
    bridges: Vec<Vec<f64>>,
    segment_refs: Vec<EmpiricalDistribution1D>,
    segment_costs: Vec<Vec<f64>>,
    history: Vec<EmpiricalDistribution1D>,
    latent: Vec<f64>,
}

impl SyntheticEnv {
    pub fn new(cfg: &EnvConfig, horizon: usize, m: usize, rng: &mut SimRng) -> Result<Self> {
        let params = SyntheticParams::resolve(cfg, horizon, m)?;
        let agents = (0..m)
            .map(|k| {
                Ok(AgentSpec {
                    id: k,
                    output_dist: Distribution::Empirical(discretized_normal(
                        params.output_means[k],
                        params.output_stds[k],
                        params.output_atoms,
                    )?),
                    survival: params.survival[k].clone(),
                    cost_noise_sigma: params.cost_noise_sigmas[k],
                    label: format!("agent-{k}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bridges = if params.kind == EnvKind::NoniidBb {
            (0..m)
                .map(|k| {
                    brownian_bridge(
                        params.bridge_starts[k],
                        params.bridge_ends[k],
                        horizon,
                        params.volatility,
                        rng,
                    )
                    .into_iter()
                    .map(|x| x.clamp(0.0, 1.0))
                    .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let segment_refs = params
            .references
            .iter()
            .map(|&(mu, sd)| discretized_normal(mu, sd, params.output_atoms))
            .collect::<Result<Vec<_>>>()?;
        let segment_costs = segment_refs
            .iter()
            .map(|r| costs_against(&agents, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            agents,
            bridges,
            segment_refs,
            segment_costs,
            history: Vec::new(),
            latent: Vec::new(),
        })
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    /// Unclamped reward draws of the last round.
    pub fn latent_rewards(&self) -> &[f64] {
        &self.latent
    }

    /// Latent mean path of an agent in the bridge environment.
    pub fn bridge_path(&self, agent: usize) -> Option<&[f64]> {
        self.bridges.get(agent).map(|p| p.as_slice())
    }

    /// The agents' expected latent reward at round `t`.
    pub fn mean_rewards(&self, t: usize) -> Vec<f64> {
        let p = &self.params;
        (0..self.agents.len())
            .map(|k| match p.kind {
                EnvKind::NoniidSd => p.drift_mean(k, t),
                EnvKind::NoniidBb => self.bridges[k][t - 1],
                EnvKind::IidM => p.mixtures[k].mean(),
                _ => p.means[k],
            })
            .collect()
    }
}

fn costs_against(agents: &[AgentSpec], reference: &EmpiricalDistribution1D) -> Result<Vec<f64>> {
    let reference = Distribution::Empirical(reference.clone());
    agents
        .iter()
        .map(|a| clean_alignment(&a.output_dist, &reference))
        .collect()
}

impl Environment for SyntheticEnv {
    fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn is_noniid(&self) -> bool {
        matches!(self.params.kind, EnvKind::NoniidPs | EnvKind::NoniidSd | EnvKind::NoniidBb)
    }

    fn step(&mut self, t: usize, rng: &mut SimRng) -> Result<EnvRound> {
        check_round(t, self.params.horizon)?;
        let p = &self.params;
        let m = self.agents.len();
        let segment = p.segment(t);

        let features = if p.kind == EnvKind::IidM {
            half_moon_point(p.moon_noise, rng).to_vec()
        } else {
            (0..p.feature_dim).map(|_| rng.random::<f64>()).collect()
        };

        // Gaussian copula: a shared factor with loading sqrt(rho).
        let z0: f64 = rng.sample(StandardNormal);
        let (a, b) = (p.correlation.sqrt(), (1.0 - p.correlation).sqrt());
        let z: Vec<f64> = (0..m)
            .map(|_| a * z0 + b * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let means = self.mean_rewards(t);
        let latent: Vec<f64> = if p.kind == EnvKind::IidM {
            p.mixtures
                .iter()
                .zip(&z)
                .map(|(mix, &zk)| {
                    let c = usize::from(rng.random::<f64>() >= mix.weight);
                    mix.means[c] + mix.stds[c] * zk
                })
                .collect()
        } else {
            let stds = &p.segment_stds[segment.min(p.segment_stds.len() - 1)];
            (0..m).map(|k| means[k] + stds[k] * z[k]).collect()
        };
        let rewards = latent.iter().map(|x| x.clamp(0.0, 1.0)).collect();

        let (reference, costs) = match p.reference_mode {
            ReferenceMode::Oracle => (
                self.segment_refs[segment].clone(),
                self.segment_costs[segment].clone(),
            ),
            ReferenceMode::Sliding => {
                let (mu, sd) = p.references[segment];
                let draws: Vec<f64> = (0..p.reference_sample_size)
                    .map(|_| mu + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                self.history.push(EmpiricalDistribution1D::new(draws, None)?);
                if self.history.len() > p.reference_window {
                    self.history.remove(0);
                }
                let est = sliding_reference(&self.history, p.reference_window, p.weighting, p.grid)?;
                let costs = costs_against(&self.agents, &est)?;
                (est, costs)
            }
        };

        let drift_phase = if p.kind == EnvKind::NoniidSd {
            (2.0 * PI * t as f64 / p.period).rem_euclid(2.0 * PI)
        } else {
            0.0
        };
        self.latent = latent;
        Ok(EnvRound {
            task: Task {
                features,
                reference: Distribution::Empirical(reference),
                shifted: segment > 0,
                round: t,
            },
            counterfactual_rewards: rewards,
            counterfactual_costs_clean: costs,
            meta: RoundMeta {
                segment,
                drift_phase,
                shifted: segment > 0,
                label: None,
                correct: None,
            },
        })
    }
}
