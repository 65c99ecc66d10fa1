//! Run configuration: a JSON document (full-line `//` comments allowed)
//! describing the switching system plus per-command blocks.
//!
//! Validation errors carry the config path of the offending field, e.g.
//! `system.rates[1]`. The `system` block builds a
//! [`SwitchingSystem`]; command blocks are read by the CLI dispatcher.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::parse_field;
use crate::flow::Manifold;
use crate::pdmp::SwitchingSystem;
use crate::reach::ReachMode;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
}

fn invalid(path: impl Into<String>, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub system: SystemConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub check: Option<CheckConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub density: Option<DensityConfig>,
    #[serde(default)]
    pub reach: Option<ReachConfig>,
    #[serde(default)]
    pub resolvent: Option<ResolventConfig>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub manifold: ManifoldConfig,
    /// One entry per driving field; each entry holds the `n` components
    /// separated by `;`.
    pub fields: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Exponential switching rates, one per field. Default: all 1.
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    /// Row-stochastic jump matrix with zero diagonal, or the string
    /// "uniform". Default: uniform.
    #[serde(default)]
    pub jump: Option<JumpSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub kind: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum JumpSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub random_points: usize,
    /// Box to draw random points from; defaults to the unit box on the torus.
    #[serde(default)]
    pub sample_box: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_depth_cap")]
    pub depth_cap: usize,
    #[serde(default = "default_rank_tol")]
    pub tol: f64,
}

fn default_depth_cap() -> usize {
    4
}

fn default_rank_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub initial_point: Vec<f64>,
    /// 1-based driving-state index.
    pub initial_state: usize,
    pub horizon: f64,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    /// One trajectory per seed; defaults to the top-level seed.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

fn default_sample_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    pub bins: Vec<usize>,
    #[serde(default = "default_burn_in_fraction")]
    pub burn_in_fraction: f64,
}

fn default_burn_in_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachConfig {
    pub origin: Vec<f64>,
    pub mode: ReachModeConfig,
    pub n_samples: usize,
    pub max_switches: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReachModeConfig {
    FixedTime(f64),
    AnyTime(f64),
}

impl From<&ReachModeConfig> for ReachMode {
    fn from(m: &ReachModeConfig) -> ReachMode {
        match m {
            ReachModeConfig::FixedTime(t) => ReachMode::FixedTime(*t),
            ReachModeConfig::AnyTime(t) => ReachMode::AnyTime(*t),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventConfig {
    pub origin: Vec<f64>,
    /// 1-based driving-state index. Default 1.
    #[serde(default = "default_initial_state")]
    pub initial_state: usize,
    pub n_samples: usize,
    #[serde(rename = "box", default)]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub bins: Option<Vec<usize>>,
}

fn default_initial_state() -> usize {
    1
}

/// Drops full-line `//` comments so annotated configs stay plain JSON
/// underneath.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with("//"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a config document (JSON with optional full-line comments).
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(&strip_comments(text))
        .map_err(|e| ConfigError::Json(e.to_string()))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!(
                "unsupported schema version {} (this build reads {})",
                cfg.schema_version, SCHEMA_VERSION
            ),
        ));
    }
    Ok(cfg)
}

impl RunConfig {
    /// Builds and validates the switching system described by `system`.
    pub fn build_system(&self) -> Result<SwitchingSystem, ConfigError> {
        let sys = &self.system;
        let n = sys.manifold.dim;
        if n == 0 {
            return Err(invalid("system.manifold.dim", "dimension must be positive"));
        }
        let manifold = match sys.manifold.kind.as_str() {
            "torus" => Manifold::Torus(n),
            "euclidean" => Manifold::Euclidean(n),
            other => {
                return Err(invalid(
                    "system.manifold.kind",
                    format!("unknown manifold kind `{other}` (expected `torus` or `euclidean`)"),
                ))
            }
        };
        let k = sys.fields.len();
        let mut fields = Vec::with_capacity(k);
        for (i, text) in sys.fields.iter().enumerate() {
            let f = parse_field(text, n, &sys.params)
                .map_err(|e| invalid(format!("system.fields[{i}]"), e))?;
            fields.push(f);
        }
        let rates = sys.rates.clone().unwrap_or_else(|| vec![1.0; k]);
        let jump = match &sys.jump {
            None => SwitchingSystem::uniform_jump(k),
            Some(JumpSpec::Named(name)) if name == "uniform" => SwitchingSystem::uniform_jump(k),
            Some(JumpSpec::Named(name)) => {
                return Err(invalid(
                    "system.jump",
                    format!("unknown jump spec `{name}` (expected `uniform` or a matrix)"),
                ))
            }
            Some(JumpSpec::Matrix(m)) => m.clone(),
        };
        SwitchingSystem::new(manifold, fields, rates, jump).map_err(|e| invalid("system", e))
    }

    /// Converts a 1-based state label from the config into a 0-based index.
    pub fn state_index(&self, label: usize, path: &str, k: usize) -> Result<usize, ConfigError> {
        if label == 0 || label > k {
            return Err(invalid(path, format!("state {label} out of range 1..={k}")));
        }
        Ok(label - 1)
    }

    pub fn require_check(&self) -> Result<&CheckConfig, ConfigError> {
        self.check
            .as_ref()
            .ok_or_else(|| invalid("check", "missing `check` block"))
    }

    pub fn require_simulate(&self) -> Result<&SimulateConfig, ConfigError> {
        self.simulate
            .as_ref()
            .ok_or_else(|| invalid("simulate", "missing `simulate` block"))
    }

    pub fn require_density(&self) -> Result<&DensityConfig, ConfigError> {
        self.density
            .as_ref()
            .ok_or_else(|| invalid("density", "missing `density` block"))
    }

    pub fn require_reach(&self) -> Result<&ReachConfig, ConfigError> {
        self.reach
            .as_ref()
            .ok_or_else(|| invalid("reach", "missing `reach` block"))
    }

    pub fn require_resolvent(&self) -> Result<&ResolventConfig, ConfigError> {
        self.resolvent
            .as_ref()
            .ok_or_else(|| invalid("resolvent", "missing `resolvent` block"))
    }
}
