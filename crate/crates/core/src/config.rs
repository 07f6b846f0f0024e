//! JSON pipeline configuration. Every key is optional and falls back to its
//! default; unknown keys are errors at every nesting level.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgan::{GanHyper, IMAGE_SIZE};
use crate::encoder::EncoderHyper;
use crate::features::{default_montage, BandDef, FeatureError, MontageGraph, DEFAULT_KERNEL_WIDTH};
use crate::imaging::UPSCALE_FACTORS;
use crate::ingest::{DEFAULT_GAIN, DEFAULT_RATE_HZ, SUPPORTED_GAINS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub eeg_csv: Option<PathBuf>,
    pub paintings_dir: Option<PathBuf>,
    pub encoder_ckpt: Option<PathBuf>,
    pub generator_ckpt: Option<PathBuf>,
    pub discriminator_ckpt: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub channels: usize,
    pub rate_hz: f64,
    /// Length of synthetic epochs.
    pub epoch_seconds: f64,
    pub gain: u32,
    pub bands: Vec<BandDef>,
    /// Gaussian kernel width of the montage graph.
    pub montage_theta: f64,
    pub encoder: EncoderHyper,
    pub gan: GanHyper,
    pub image_size: usize,
    /// 1 disables upscaling.
    pub upscale: usize,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            channels: 8,
            rate_hz: DEFAULT_RATE_HZ,
            epoch_seconds: 2.0,
            gain: DEFAULT_GAIN,
            bands: BandDef::defaults(),
            montage_theta: DEFAULT_KERNEL_WIDTH,
            encoder: EncoderHyper::default(),
            gan: GanHyper::default(),
            image_size: IMAGE_SIZE,
            upscale: 16,
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.encoder.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.channels < 2 {
            return invalid(format!("channels must be at least 2, got {}", self.channels));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz >= 100.0) {
            return invalid(format!("rate_hz must be at least 100, got {}", self.rate_hz));
        }
        if !(self.epoch_seconds.is_finite() && self.epoch_seconds >= 1.0) {
            return invalid(format!("epoch_seconds must be at least 1, got {}", self.epoch_seconds));
        }
        if !SUPPORTED_GAINS.contains(&self.gain) {
            return invalid(format!("gain must be one of {SUPPORTED_GAINS:?}, got {}", self.gain));
        }
        if self.bands.is_empty() {
            return invalid("at least one band is required".into());
        }
        for band in &self.bands {
            band.check(self.rate_hz).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if !(self.montage_theta.is_finite() && self.montage_theta > 0.0) {
            return invalid(format!("montage_theta must be positive, got {}", self.montage_theta));
        }
        if self.image_size != IMAGE_SIZE {
            return invalid(format!("image_size must be {IMAGE_SIZE}, got {}", self.image_size));
        }
        if self.upscale != 1 && !UPSCALE_FACTORS.contains(&self.upscale) {
            return invalid(format!("upscale must be 1 or one of {UPSCALE_FACTORS:?}, got {}", self.upscale));
        }
        Ok(())
    }

    pub fn montage(&self) -> Result<MontageGraph, FeatureError> {
        default_montage(self.channels, self.montage_theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn small_latent_rejected() {
        let err = PipelineConfig::from_json(r#"{"encoder": {"latent": 4}}"#).unwrap_err();
        assert!(err.to_string().contains("latent dim must exceed class count"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        assert!(matches!(PipelineConfig::from_json(r#"{"sead": 1}"#), Err(ConfigError::Parse(_))));
        assert!(matches!(PipelineConfig::from_json(r#"{"gan": {"stepz": 1}}"#), Err(ConfigError::Parse(_))));
        assert!(matches!(
            PipelineConfig::from_json(r#"{"bands": [{"name": "a", "lo_hz": 1, "hi_hz": 4, "x": 0}]}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn band_beyond_nyquist_rejected() {
        let err = PipelineConfig::from_json(r#"{"rate_hz": 100, "bands": [{"name": "g", "lo_hz": 31, "hi_hz": 60}]}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }
}
