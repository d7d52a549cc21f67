//! The pipeline configuration. Every field is required in the file so a
//! missing weight is an error, not a silent default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{line_of, parse_error, read_text};
use crate::error::{Error, Result};
use crate::foot_refine::DEFAULT_CONTACT_THRESHOLD;
use crate::generator::GeneratorConfig;
use crate::hand_refine::RefineConfig;
use crate::metrics::MetricsConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootConfig {
    /// Contact probability at or above which a foot counts as planted.
    pub contact_threshold: f64,
}

impl Default for FootConfig {
    fn default() -> Self {
        Self { contact_threshold: DEFAULT_CONTACT_THRESHOLD }
    }
}

impl FootConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.contact_threshold) {
            return Err(Error::Config(format!("contact_threshold must lie in [0, 1], got {}", self.contact_threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frame rate of generated motion.
    pub fps: f64,
    pub generator: GeneratorConfig,
    pub foot: FootConfig,
    pub hand: RefineConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            generator: GeneratorConfig::default(),
            foot: FootConfig::default(),
            hand: RefineConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        self.generator.validate()?;
        self.foot.validate()?;
        self.hand.validate()?;
        self.metrics.validate()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            parse_error(path, line, e.message().to_string())
        })?;
        cfg.validate().map_err(|e| parse_error(path, 0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}
