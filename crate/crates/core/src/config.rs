//! Engine configuration shared by the CLI and the service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TraceExtractionRules;
use crate::types::{FeatureWeights, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub weights: FeatureWeights,
    pub k: usize,
    pub min_term_frequency: usize,
    pub thresholds: Thresholds,
    /// `None` disables trace augmentation.
    pub trace_rules: Option<TraceExtractionRules>,
    pub downsample: DownsampleConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            weights: FeatureWeights::default(),
            k: 11,
            min_term_frequency: 3,
            thresholds: Thresholds::default(),
            trace_rules: Some(TraceExtractionRules::default()),
            downsample: DownsampleConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k", "must be at least 1"));
        }
        if self.min_term_frequency == 0 {
            return Err(Error::validation("min_term_frequency", "must be at least 1"));
        }
        self.downsample.validate()
    }

    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: EngineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn without_trace_rules(mut self) -> Self {
        self.trace_rules = None;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownsampleConfig {
    pub group_distance_threshold: f64,
    pub per_group_cap: usize,
    /// Downsample the store before every retrain. Off by default: downsampling
    /// is normally an explicit offline step.
    pub apply_on_retrain: bool,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        DownsampleConfig {
            group_distance_threshold: 0.15,
            per_group_cap: 50,
            apply_on_retrain: false,
        }
    }
}

impl DownsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.group_distance_threshold) {
            return Err(Error::validation(
                "downsample.group_distance_threshold",
                "must lie in [0, 1]",
            ));
        }
        if self.per_group_cap < 1 {
            return Err(Error::validation("downsample.per_group_cap", "must be at least 1"));
        }
        Ok(())
    }
}
