//! TOML run configuration. Every field has a default, so an empty file is
//! valid.
//!
//! ```toml
//! seed = 7
//! precision = 32
//!
//! [dataset]
//! count = 1200
//! classes = 4
//! val_fraction = 0.25
//!
//! [surrogate]
//! iterations = 300
//!
//! [baf]
//! iterations = 400
//! learning_rate = 1e-3
//!
//! [sweep]
//! channels = [4, 8, 16, 32]
//! bits = [2, 4, 6, 8]
//! codecs = ["raw", "med_range"]
//! ```

use serde::{Deserialize, Serialize};

use super::surrogate::SurrogateConfig;
use crate::baf::TrainConfig;
use crate::codec::CodecId;
use crate::error::{Error, Result};
use crate::quant::check_bits;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub classes: usize,
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 1200,
            classes: 4,
            val_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub channels: Vec<usize>,
    pub bits: Vec<u8>,
    pub codecs: Vec<String>,
    /// Restoration network width; 0 means Q.
    pub hidden: usize,
    /// Fraction of the training images held out for restoration-model
    /// selection.
    pub baf_holdout: f64,
    /// Training images used to fit restoration models; 0 means all.
    pub baf_train_images: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            channels: vec![4, 8, 16, 32],
            bits: vec![2, 4, 6, 8],
            codecs: vec!["raw".into(), "med_range".into()],
            hidden: 0,
            baf_holdout: 0.1,
            baf_train_images: 0,
        }
    }
}

impl SweepConfig {
    pub fn codec_ids(&self) -> Result<Vec<CodecId>> {
        let ids = self.codecs.iter().map(|c| c.parse()).collect::<Result<Vec<CodecId>>>()?;
        if ids.contains(&CodecId::External) {
            return Err(Error::config("the sweep measures built-in codecs only"));
        }
        Ok(ids)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: u64,
    /// 32 or 64; precision of restoration training and inference.
    pub precision: u32,
    pub dataset: DatasetConfig,
    pub surrogate: SurrogateConfig,
    pub baf: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            precision: 32,
            dataset: DatasetConfig::default(),
            surrogate: SurrogateConfig::default(),
            baf: TrainConfig {
                iterations: 400,
                ..TrainConfig::default()
            },
            sweep: SweepConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != 32 && self.precision != 64 {
            return Err(Error::config(format!("precision must be 32 or 64, got {}", self.precision)));
        }
        self.baf.validate()?;
        self.sweep.codec_ids()?;
        let p = self.surrogate.split_outputs;
        for &c in &self.sweep.channels {
            if c == 0 || !c.is_power_of_two() || c > p {
                return Err(Error::config(format!("C = {c} must be a power of two no larger than P = {p}")));
            }
        }
        for &n in &self.sweep.bits {
            check_bits(n)?;
        }
        if !(0.0..1.0).contains(&self.sweep.baf_holdout) {
            return Err(Error::config("baf_holdout must lie in [0, 1)"));
        }
        Ok(())
    }
}
