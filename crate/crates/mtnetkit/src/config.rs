//! Run configuration: one JSON document nesting every module's knobs, with
//! defaults that produce a runnable pipeline and strict rejection of unknown
//! keys (a silently ignored typo in a config is the classic source of
//! irreproducible runs).

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::loss::LossConfig;
use crate::update::UpdateConfig;
use crate::Error;

/// Transformer fusion shape knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Token dimension; must be divisible by `heads` and by 4 (for the 2-D
    /// positional encodings).
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { dim: 64, heads: 4, layers: 4 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.dim == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::Config("fusion dim/heads/layers must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "fusion dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.dim % 4 != 0 {
            return Err(Error::Config(format!(
                "fusion dim {} must be divisible by 4 for positional encodings",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Everything a tracking run needs, in one strict JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds every parameter draw in the pipeline; echoed into all reports.
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    pub update: UpdateConfig,
    /// Blend weight of the Hann window prior in proposal scoring.
    pub window_gamma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            backbone: BackboneConfig::default(),
            fusion: FusionConfig::default(),
            loss: LossConfig::default(),
            update: UpdateConfig::default(),
            window_gamma: 0.45,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.backbone.validate()?;
        self.fusion.validate()?;
        self.loss.validate().map_err(Error::Config)?;
        self.update.validate().map_err(Error::Config)?;
        if !(0.0..=1.0).contains(&self.window_gamma) || !self.window_gamma.is_finite() {
            return Err(Error::Config(format!(
                "window_gamma must lie in [0,1], got {}",
                self.window_gamma
            )));
        }
        Ok(())
    }

    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
