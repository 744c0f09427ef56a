//! Experiment configuration: TOML sections over built-in defaults, plus
//! dotted-path `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::DqnConfig;
use crate::env::{ChannelParams, CodebookConfig, TrajectoryConfig};
use crate::policies::PolicyKind;
use crate::predictor::{LossKind, PredictorConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override `{0}` must have the form key=value")]
    OverrideSyntax(String),
    #[error("unknown config key `{key}` in override `{token}`")]
    UnknownKey { key: String, token: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub trajectory: TrajectoryConfig,
    pub codebook: CodebookConfig,
    pub channel: ChannelParams,
}

/// Contiguous train / validation fractions; the rest is the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
        }
    }
}

// Plain values come before the section tables so the struct serialises to
// valid TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub budgets: Vec<f64>,
    /// V per budget (or the V axis when `pair_v` is false). Empty means the
    /// default pairing for each budget.
    pub v_values: Vec<f64>,
    /// Zip `budgets` with `v_values` instead of taking their product.
    pub pair_v: bool,
    pub policies: Vec<PolicyKind>,
    /// Predictor age limits to sweep; empty means `[predictor.age_limit]`.
    pub age_limits: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Inference slots per run.
    pub horizon: usize,
    pub loss: LossKind,
    pub output_dir: PathBuf,
    /// Sweep worker threads; 0 uses every core.
    pub workers: usize,
    pub split: SplitConfig,
    pub scenario: ScenarioConfig,
    pub predictor: PredictorConfig,
    pub dqn: DqnConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            budgets: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            v_values: vec![1.0, 10.0, 10.0, 100.0, 100.0],
            pair_v: true,
            policies: vec![PolicyKind::Dqn, PolicyKind::Randomized, PolicyKind::Always],
            age_limits: Vec::new(),
            seeds: vec![0],
            horizon: 20_000,
            loss: LossKind::CrossEntropy,
            output_dir: PathBuf::from("runs"),
            workers: 0,
            split: SplitConfig::default(),
            scenario: ScenarioConfig::default(),
            predictor: PredictorConfig::default(),
            dqn: DqnConfig::default(),
        }
    }
}

/// V used for a budget when none is configured: small budgets get a small V.
pub fn default_v(alpha_max: f64) -> f64 {
    if alpha_max <= 0.1 {
        1.0
    } else if alpha_max <= 0.5 {
        10.0
    } else {
        100.0
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut tree = toml::Table::try_from(Self::default())
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut tree, file);
        for token in overrides {
            apply_override(&mut tree, token)?;
        }
        let cfg: Self = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.budgets.is_empty() {
            return bad("budgets must be non-empty".into());
        }
        if let Some(a) = self.budgets.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return bad(format!(
                "every budget must satisfy 0 < alpha_max <= 1, got {a}"
            ));
        }
        if self.pair_v && !self.v_values.is_empty() && self.v_values.len() != self.budgets.len() {
            return bad(format!(
                "budgets and v_values must have the same length ({} vs {})",
                self.budgets.len(),
                self.v_values.len()
            ));
        }
        if let Some(v) = self
            .v_values
            .iter()
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return bad(format!("every V must be finite and >= 0, got {v}"));
        }
        if self.policies.is_empty() {
            return bad("policies must be non-empty".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        let s = self.split;
        if !(s.train > 0.0 && s.validation >= 0.0 && s.train + s.validation < 1.0) {
            return bad(
                "split must satisfy train > 0, validation >= 0, train + validation < 1".into(),
            );
        }
        self.scenario
            .trajectory
            .validate()
            .and_then(|_| self.scenario.codebook.validate())
            .and_then(|_| self.scenario.channel.validate())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.predictor
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.dqn
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// `(alpha_max, V)` pairs to run.
    pub fn budget_arms(&self) -> Vec<(f64, f64)> {
        if self.v_values.is_empty() {
            return self.budgets.iter().map(|&a| (a, default_v(a))).collect();
        }
        if self.pair_v {
            self.budgets
                .iter()
                .copied()
                .zip(self.v_values.iter().copied())
                .collect()
        } else {
            self.budgets
                .iter()
                .flat_map(|&a| self.v_values.iter().map(move |&v| (a, v)))
                .collect()
        }
    }

    pub fn age_limits(&self) -> Vec<usize> {
        if self.age_limits.is_empty() {
            vec![self.predictor.age_limit]
        } else {
            self.age_limits.clone()
        }
    }

    pub fn num_beams(&self) -> usize {
        self.scenario.codebook.num_beams
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    if let Ok(t) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    // bare words: `policies=dqn` or `policies=[dqn,always]`
    if let Some(inner) = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        return toml::Value::Array(
            inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(parse_value)
                .collect(),
        );
    }
    toml::Value::String(raw.to_string())
}

/// Integers become floats where the default is a float, and scalars become
/// one-element lists where the default is a list.
fn coerce(existing: Option<&toml::Value>, new: toml::Value) -> toml::Value {
    use toml::Value;
    match (existing, new) {
        (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
        (Some(Value::Array(a)), Value::Array(items)) => {
            let proto = a.first();
            Value::Array(items.into_iter().map(|v| coerce(proto, v)).collect())
        }
        (Some(Value::Array(a)), scalar) => Value::Array(vec![coerce(a.first(), scalar)]),
        (_, v) => v,
    }
}

/// Keys whose default is absent from the serialised tree.
const OPTIONAL_KEYS: [&str; 1] = ["dqn.age_cap"];

fn apply_override(tree: &mut toml::Table, token: &str) -> Result<(), ConfigError> {
    let (key, raw) = token
        .split_once('=')
        .ok_or_else(|| ConfigError::OverrideSyntax(token.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::OverrideSyntax(token.to_string()));
    }
    let parts: Vec<&str> = key.split('.').collect();
    let unknown = || ConfigError::UnknownKey {
        key: key.to_string(),
        token: token.to_string(),
    };
    let mut table = tree;
    for part in &parts[..parts.len() - 1] {
        table = match table.get_mut(*part) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(unknown()),
        };
    }
    let leaf = parts[parts.len() - 1];
    if !table.contains_key(leaf) && !OPTIONAL_KEYS.contains(&key) {
        return Err(unknown());
    }
    let value = coerce(table.get(leaf), parse_value(raw));
    table.insert(leaf.to_string(), value);
    Ok(())
}
