//! JSON run configuration shared by the command-line subcommands.

use crate::analysis::CountTable;
use crate::bits::BitString;
use crate::bounds::{FreeVariables, SchemeParams, SweepSettings};
use crate::photonics::{DetectorModel, PrepConfig, ReportingStrategy, SourceModel};
use crate::protocol::{Adversary, ChannelModel, Geometry, Scheme, Setup};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Preset with the parameters and counts of the reported experiment.
pub const EXPERIMENT_PRESET: &str = include_str!("../presets/paper-experiment.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config is missing the `{0}` block")]
    Missing(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: Option<SchemeParams>,
    #[serde(default)]
    pub free: Option<FreeVariables>,
    /// Number of spacelike-separated presentation pairs for the multi-round bound.
    #[serde(default)]
    pub spacelike_pairs: Option<u64>,
    #[serde(default)]
    pub counts: Option<CountTable>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub theta_deg: Vec<f64>,
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    pub target: f64,
    #[serde(default)]
    pub nu_unf: Option<f64>,
    #[serde(default)]
    pub settings: SweepSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub pulses: u64,
    pub source: SourceModel,
    pub detectors: DetectorModel,
    pub prep: PrepConfig,
    pub strategy: ReportingStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub scheme: Scheme,
    pub geometry: Geometry,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub tilt: crate::photonics::TiltModel,
    /// Honest presentation point (defaults to all zeros).
    #[serde(default)]
    pub b: Option<BitString>,
    #[serde(default)]
    pub adversary: Option<Adversary>,
    /// Presentation pair for the double-spend experiment.
    #[serde(default)]
    pub target: Option<(BitString, BitString)>,
    #[serde(default = "one")]
    pub trials: u64,
}

fn one() -> u64 {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn experiment_preset() -> Self {
        Self::from_json(EXPERIMENT_PRESET).expect("embedded preset parses")
    }

    pub fn params(&self) -> Result<&SchemeParams, ConfigError> {
        self.params.as_ref().ok_or(ConfigError::Missing("params"))
    }

    /// Domain checks on every block that is present.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if let Some(p) = &self.params {
            p.validate().map_err(|e| invalid(&e))?;
        }
        if let Some(v) = &self.free {
            if !(v.nu_cor > 0.0 && v.nu_unf > 0.0) {
                return Err(ConfigError::Invalid("free variables must be positive".into()));
            }
        }
        if let Some(c) = &self.counts {
            c.validate().map_err(|e| invalid(&e))?;
        }
        if let Some(s) = &self.sweep {
            if s.theta_deg.is_empty() || s.e.is_empty() {
                return Err(ConfigError::Invalid("sweep grids must be non-empty".into()));
            }
            if !(s.target > 0.0 && s.target < 1.0) {
                return Err(ConfigError::Invalid(format!("sweep target {} not in (0,1)", s.target)));
            }
        }
        if let Some(s) = &self.simulate {
            s.detectors.validate().map_err(|e| invalid(&e))?;
            s.prep.validate().map_err(|e| invalid(&e))?;
            crate::photonics::poisson_for(&s.source).map_err(|e| invalid(&e))?;
        }
        if self.protocol.is_some() {
            self.protocol_setup()?.validate().map_err(|e| invalid(&e))?;
        }
        Ok(())
    }

    pub fn protocol_setup(&self) -> Result<Setup, ConfigError> {
        let p = self.protocol.as_ref().ok_or(ConfigError::Missing("protocol"))?;
        Ok(Setup {
            scheme: p.scheme,
            params: self.params()?.clone(),
            geometry: p.geometry.clone(),
            channel: p.channel,
            tilt: p.tilt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parses_and_validates() {
        let c = RunConfig::experiment_preset();
        c.validate().unwrap();
        let p = c.params().unwrap();
        assert_eq!(p.n, 40_000_000);
        assert_eq!(p.beta_ps, 3.6e-3);
        assert_eq!(c.counts.unwrap().n, 742_491);
        assert_eq!(c.free.unwrap().nu_unf, 3.9e-3);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"parms": {}}"#).is_err());
    }

    #[test]
    fn bad_domain_rejected() {
        let mut c = RunConfig::experiment_preset();
        c.params.as_mut().unwrap().beta_pb = 0.7;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }
}
