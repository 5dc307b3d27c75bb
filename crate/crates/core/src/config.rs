//! `config.json`: one document for every stage. All fields are optional and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpm::SimConfig;
use crate::padding::PaddingConfig;
use crate::reconstruct::OptimConfig;
use crate::scene::MaterialParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Upper bound on simulation steps per second while running.
    pub max_steps_per_sec: f64,
    pub render_width: usize,
    pub render_height: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_steps_per_sec: 30.0, render_width: 640, render_height: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub material: MaterialParams,
    pub optim: OptimConfig,
    pub padding: PaddingConfig,
    pub sim: SimConfig,
    pub service: ServiceConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.material.validate().map_err(|e| inv(e.to_string()))?;
        self.optim.validate().map_err(|e| inv(e.to_string()))?;
        self.padding.validate().map_err(inv)?;
        self.sim.validate().map_err(|e| inv(e.to_string()))?;
        if !(self.service.max_steps_per_sec > 0.0) {
            return Err(inv("service.max_steps_per_sec must be positive".into()));
        }
        if self.service.render_width == 0 || self.service.render_height == 0 {
            return Err(inv("service render size must be non-zero".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.optim.iterations, 7000);
        assert_eq!(cfg.padding.grid, 100);
        assert_eq!(cfg.sim.substeps, 80);
        assert_eq!(cfg.sim.dt, 5e-4);
        assert_eq!(cfg.material.youngs_modulus, 3000.0);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"optim": {"eta": 0.0}, "material": {"poisson_ratio": 0.3}}"#).unwrap();
        assert_eq!(cfg.optim.eta, 0.0);
        assert_eq!(cfg.optim.gamma, 10.0);
        assert_eq!(cfg.material.poisson_ratio, 0.3);
        assert_eq!(cfg.material.density, 1000.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"optim": {"etaa": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_json(r#"{"material": {"poisson_ratio": 0.5}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"optim": {"gamma": 1.0}}"#).is_err());
    }
}
