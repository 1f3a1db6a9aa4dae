use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use surfik::fk::{DatasetConfig, FkConfig};
use surfik::ik::{GradCheckConfig, IkConfig};
use surfik::oracle::{CaptureConfig, MannequinConfig, RealityGap};
use surfik::sim2real::S2rConfig;

use crate::error::CliError;

/// Everything a run needs. Loaded from one JSON file, then patched with
/// `--set key=value` overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for capture actuations, marker noise and target generation.
    pub seed: u64,
    pub mannequin: MannequinConfig,
    pub gap: RealityGap,
    pub dataset: DatasetConfig,
    pub capture: CaptureSection,
    pub fk: FkConfig,
    pub s2r: S2rConfig,
    pub ik: IkConfig,
    pub eval: EvalSection,
    pub target: TargetSection,
    pub audit: AuditSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSection {
    pub frames: usize,
    pub settings: CaptureConfig,
}

impl Default for CaptureSection {
    fn default() -> Self {
        Self {
            frames: 40,
            settings: CaptureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Held-out actuations, taken from the Halton sequence after `skip`.
    pub actuations: usize,
    pub skip: usize,
    /// Probe grid per direction.
    pub grid: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            actuations: 20,
            skip: 5000,
            grid: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    /// Calibrated surface of the trained pipeline (reachable by construction).
    #[default]
    Model,
    /// The oracle's physical surface.
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub source: TargetSource,
    pub grid: usize,
    /// Uniform start actuation for `solve`.
    pub start: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            source: TargetSource::Model,
            grid: 60,
            start: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub gradcheck: GradCheckConfig,
    pub gradcost_trials: usize,
    pub min_cost_ratio: f64,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            gradcheck: GradCheckConfig::default(),
            gradcost_trials: 5,
            min_cost_ratio: 2.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
                let parsed: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Input(format!("bad config {}: {e}", p.display())))?;
                serde_json::to_value(parsed).expect("config serialises")
            }
            None => serde_json::to_value(RunConfig::default()).expect("config serialises"),
        };
        for s in sets {
            apply_override(&mut value, s)?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Input(format!("bad override: {e}")))
    }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, otherwise taken
/// as a string. The path must already exist in the config.
pub fn apply_override(root: &mut Value, entry: &str) -> Result<(), CliError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override `{entry}` is not key=value")))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| CliError::Input(format!("unknown config key `{key}`")))?;
    }
    *slot = new;
    Ok(())
}
