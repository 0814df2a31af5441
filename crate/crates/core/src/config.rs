//! Config files: TOML with `[run]`, `[policy]`, `[env]` and `[checks]`
//! sections whose keys are the field names of the corresponding structs.
//! `key=value` overrides are applied to the parsed table before it is
//! resolved, so they go through the same validation as file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::checks::ChecksConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::model::{CiMethod, EtaSchedule, ExperimentConfig, RewardSource};
use crate::policy::PolicyKind;
use crate::survival::{CensoringConfig, FrailtyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub horizon: usize,
    pub num_agents: usize,
    pub seeds: Vec<u64>,
    /// Policy names; `bot_orch` picks the variant matched to the environment.
    pub policies: Vec<String>,
    pub lambda_grid: Vec<f64>,
    pub ci_method: CiMethod,
    pub oracle_uses_clean_costs: bool,
    pub parallel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_eval: Option<f64>,
    pub alpha: f64,
    pub eta0: f64,
    pub eta_schedule: EtaSchedule,
    pub beta: f64,
    pub history_window: usize,
}

/// `[env]`: the environment plus the survival simulation shared by all
/// environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    #[serde(flatten)]
    pub environment: EnvConfig,
    pub frailty_shape: f64,
    pub frailty: FrailtyKind,
    pub censoring: CensoringConfig,
    pub reward_source: RewardSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub run: RunSection,
    pub policy: PolicySection,
    pub env: EnvSection,
    pub checks: ChecksConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_experiment(&ExperimentConfig::default())
    }
}

impl Default for RunSection {
    fn default() -> Self {
        Settings::default().run
    }
}

impl Default for PolicySection {
    fn default() -> Self {
        Settings::default().policy
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        Settings::default().env
    }
}

pub const DEFAULT_POLICIES: [&str; 4] = ["bot_orch", "no_ot", "random", "ucb1"];

impl Settings {
    pub fn from_experiment(e: &ExperimentConfig) -> Self {
        Self {
            run: RunSection {
                horizon: e.horizon,
                num_agents: e.num_agents,
                seeds: e.seeds.clone(),
                policies: DEFAULT_POLICIES.iter().map(|s| s.to_string()).collect(),
                lambda_grid: vec![0.0, 1.0, 3.0, 10.0],
                ci_method: e.ci_method,
                oracle_uses_clean_costs: e.oracle_uses_clean_costs,
                parallel: 1,
            },
            policy: PolicySection {
                lambda: e.lambda,
                lambda_eval: e.lambda_eval,
                alpha: e.alpha,
                eta0: e.eta0,
                eta_schedule: e.eta_schedule,
                beta: e.beta,
                history_window: e.history_window,
            },
            env: EnvSection {
                environment: e.environment.clone(),
                frailty_shape: e.frailty_shape,
                frailty: e.frailty,
                censoring: e.censoring,
                reward_source: e.reward_source,
            },
            checks: ChecksConfig::default(),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            lambda: self.policy.lambda,
            lambda_eval: self.policy.lambda_eval,
            alpha: self.policy.alpha,
            eta0: self.policy.eta0,
            eta_schedule: self.policy.eta_schedule,
            beta: self.policy.beta,
            history_window: self.policy.history_window,
            horizon: self.run.horizon,
            num_agents: self.run.num_agents,
            seeds: self.run.seeds.clone(),
            environment: self.env.environment.clone(),
            frailty_shape: self.env.frailty_shape,
            frailty: self.env.frailty,
            censoring: self.env.censoring,
            reward_source: self.env.reward_source,
            oracle_uses_clean_costs: self.run.oracle_uses_clean_costs,
            ci_method: self.run.ci_method,
        }
    }

    /// Resolves policy names against the configured environment.
    pub fn policies(&self) -> Result<Vec<PolicyKind>> {
        let noniid = self.env.environment.is_noniid();
        self.run
            .policies
            .iter()
            .map(|p| match p.as_str() {
                "bot_orch" => Ok(PolicyKind::bot_orch_for(noniid)),
                other => other.parse(),
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses config text and applies `key=value` overrides.
pub fn parse_settings(text: &str, overrides: &[String]) -> Result<Settings> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let settings: Settings = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    check_env_keys(text, overrides)?;
    Ok(settings)
}

pub fn load_settings(path: &Path, overrides: &[String]) -> Result<(Settings, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    Ok((parse_settings(&text, overrides)?, bytes))
}

const SECTIONS: [&str; 4] = ["run", "policy", "env", "checks"];

/// Keys a section accepts, taken from a fully populated default.
fn section_keys(section: &str) -> Vec<String> {
    let mut s = Settings::default();
    s.policy.lambda_eval = Some(0.0);
    s.env.environment.changepoints = Some(Vec::new());
    s.env.environment.reference_gamma = Some(1.0);
    s.env.environment.drift_period = Some(1.0);
    let v = Value::try_from(&s).expect("settings serialize");
    let mut keys: Vec<String> = v
        .get(section)
        .and_then(Value::as_table)
        .map(|t| t.keys().cloned().collect())
        .unwrap_or_default();
    if section == "env" {
        keys.push("triage".into());
    }
    keys
}

/// The `[env]` section flattens two structs, which rules out serde's
/// unknown-field rejection, so its keys are checked by hand.
fn check_env_keys(text: &str, overrides: &[String]) -> Result<()> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let known = section_keys("env");
    let mut seen: Vec<String> = table
        .get("env")
        .and_then(Value::as_table)
        .map(|t| t.keys().cloned().collect())
        .unwrap_or_default();
    for ov in overrides {
        if let Some((key, _)) = ov.split_once('=') {
            let path: Vec<&str> = key.trim().split('.').collect();
            if path.len() > 1 && path[0] == "env" {
                seen.push(path[1].to_string());
            }
        }
    }
    match seen.iter().find(|k| !known.contains(k)) {
        Some(k) => Err(Error::Config(format!("unknown key '{k}' in [env]"))),
        None => Ok(()),
    }
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `key=value` where `key` is `section.field[.sub...]` or a bare
/// field name that belongs to exactly one section. The value is read as a
/// TOML literal, falling back to a plain string.
pub fn apply_override(table: &mut Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
    let mut path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    if !SECTIONS.contains(&path[0].as_str()) {
        let owners: Vec<&str> = SECTIONS
            .iter()
            .copied()
            .filter(|s| section_keys(s).contains(&path[0]))
            .collect();
        match owners.as_slice() {
            [one] => path.insert(0, one.to_string()),
            [] => return Err(Error::Config(format!("unknown config key '{}'", path[0]))),
            _ => {
                return Err(Error::Config(format!(
                    "ambiguous key '{}', qualify it with a section",
                    path[0]
                )))
            }
        }
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a table")))?;
    }
    cur.insert(path.last().unwrap().clone(), parse_value(raw));
    Ok(())
}

/// Lowercase hex SHA-256 of the raw config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Bookkeeping written alongside run outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub config: Settings,
}
