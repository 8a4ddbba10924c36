//! The TOML document that gathers every stage's settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::inference::KiConfig;
use crate::segment::SegmentationParams;
use crate::series::FeatureSelector;
use crate::sra::TcnAeConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    /// Silence toward the payment addresses that closes a window, seconds.
    pub idle_timeout_s: f64,
    /// Seconds recorded before the first matching request.
    pub pre_pad_s: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            idle_timeout_s: 2.0,
            pre_pad_s: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesConfig {
    pub fs_hz: f64,
    pub selector: FeatureSelector,
    /// Sliding window of the viability check, seconds.
    pub viability_window_s: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            fs_hz: 40.0,
            selector: FeatureSelector::default(),
            viability_window_s: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub top_n: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { top_n: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub capture: CaptureConfig,
    pub series: SeriesConfig,
    pub segment: SegmentationParams,
    pub sra: TcnAeConfig,
    pub ki: KiConfig,
    pub rank: RankConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Replaces the top-level seed and the training seeds derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sra.seed = seed;
        self.ki.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.capture.idle_timeout_s > 0.0) {
            return bad("capture.idle_timeout_s must be positive".into());
        }
        if !(self.capture.pre_pad_s >= 0.0) {
            return bad("capture.pre_pad_s must be non-negative".into());
        }
        if !(self.series.fs_hz > 0.0 && self.series.fs_hz.is_finite()) {
            return bad("series.fs_hz must be positive".into());
        }
        if !(self.series.viability_window_s > 0.0) {
            return bad("series.viability_window_s must be positive".into());
        }
        if let Err(e) = self.segment.validate() {
            return bad(format!("segment: {e}"));
        }
        if let Err(e) = self.sra.validate() {
            return bad(format!("sra: {e}"));
        }
        if let Err(e) = self.ki.validate() {
            return bad(format!("ki: {e}"));
        }
        if self.rank.top_n == 0 {
            return bad("rank.top_n must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.series.fs_hz, 40.0);
        assert_eq!(cfg.segment.alpha, 0.6);
        assert_eq!(cfg.segment.beta, 0.5);
        assert_eq!(cfg.ki.lambda, 0.5);
        assert_eq!(cfg.capture.idle_timeout_s, 2.0);
        assert_eq!(cfg.series.viability_window_s, 1.0);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = PipelineConfig::from_toml_str("seed = 9\n[segment]\nk_keys = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.segment.k_keys, 4);
        assert_eq!(cfg.segment.alpha, 0.6);
    }

    #[test]
    fn invalid_values_rejected() {
        for doc in [
            "[capture]\nidle_timeout_s = 0.0\n",
            "[series]\nfs_hz = -1.0\n",
            "[segment]\nalpha = 1.5\n",
            "[ki]\nkernel_size = 4\n",
            "[rank]\ntop_n = 0\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml_str(doc), Err(ConfigError::Invalid(_))), "{doc}");
        }
        assert!(matches!(PipelineConfig::from_toml_str("nonsense = ["), Err(ConfigError::Parse(_))));
        assert!(matches!(PipelineConfig::from_toml_str("typo = 1\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = a.clone().with_seed(3);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_eq!(b.ki.seed, 3);
    }
}
