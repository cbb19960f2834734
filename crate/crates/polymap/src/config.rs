//! Whole-pipeline configuration as a single TOML document.
//!
//! Every stage keeps its own parameter struct; this module only composes
//! them. Missing tables or fields fall back to the stage defaults, unknown
//! keys are rejected so typos cannot silently disable a knob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::DiffusionParams;
use crate::mapman::MergeParams;
use crate::normals::NormalMode;
use crate::planefit::RansacParams;
use crate::segmentation::SegmentationParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Normal-estimation stage selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalsConfig {
    pub mode: NormalMode,
}

/// All stage parameters for one frame-to-map run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub diffusion: DiffusionParams,
    pub normals: NormalsConfig,
    pub segmentation: SegmentationParams,
    pub ransac: RansacParams,
    pub merge: MergeParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.diffusion
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.segmentation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ransac
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.merge
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

/// Parses and validates a TOML config document.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: "<inline>".into(),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_toml(cfg: &PipelineConfig) -> Result<String, ConfigError> {
    toml::to_string_pretty(cfg).map_err(|e| ConfigError::Invalid(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(path: &Path, cfg: &PipelineConfig) -> Result<(), ConfigError> {
    let text = config_to_toml(cfg)?;
    fs::write(path, text).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = config_to_toml(&cfg).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_keeps_stage_defaults() {
        let cfg = parse_config("[diffusion]\niterations = 3\n").unwrap();
        assert_eq!(cfg.diffusion.iterations, 3);
        assert_eq!(cfg.diffusion.k, DiffusionParams::default().k);
        assert_eq!(cfg.segmentation, SegmentationParams::default());
        assert_eq!(cfg.ransac, RansacParams::default());
    }

    #[test]
    fn normal_mode_parses_from_snake_case() {
        let cfg = parse_config("[normals]\nmode = \"local_plane\"\n").unwrap();
        assert_eq!(cfg.normals.mode, NormalMode::LocalPlane);
        assert_eq!(
            PipelineConfig::default().normals.mode,
            NormalMode::ImageGradient
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("[diffusion]\nbogus = 1\n").is_err());
        assert!(parse_config("bogus = 1\n").is_err());
        assert!(parse_config("[typo_section]\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let err = parse_config("[diffusion]\ngamma = 0.9\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        let mut cfg = PipelineConfig::default();
        cfg.ransac.rng_seed = 7;
        save_config(&path, &cfg).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
        assert!(load_config(&dir.path().join("missing.toml")).is_err());
    }
}
