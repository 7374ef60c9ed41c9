//! Experiment configuration: a single TOML document per run, with
//! environment-variable overrides for any key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::losses::{ContrastiveParams, FocalParams};
use crate::metrics::report::EvalConfig;
use crate::models::{SiameseConfig, TrainConfig, UNetConfig};

/// Prefix of environment variables that override config keys.
/// `CXSEG_TRAIN__EPOCHS=5` overrides `train.epochs`; `__` separates
/// nesting levels.
pub const ENV_PREFIX: &str = "CXSEG_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Dataset directory (output of `synth` or `ingest`).
    pub dir: PathBuf,
    /// Generator parameters; present for synthetic experiments.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Train/val/test fractions; must sum to 1.
    #[serde(default = "default_ratios")]
    pub split_ratios: (f64, f64, f64),
    /// Pairs generated for Siamese training.
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
}

fn default_ratios() -> (f64, f64, f64) {
    (0.7, 0.15, 0.15)
}

fn default_n_pairs() -> usize {
    400
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_ratios;
        let sum = a + b + c;
        if (sum - 1.0).abs() > 1e-9 || a <= 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::config(format!(
                "split ratios ({a}, {b}, {c}) must be non-negative and sum to 1"
            )));
        }
        if let Some(spec) = &self.synthetic {
            spec.validate(0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub siamese: SiameseConfig,
    /// Hidden width of the fusion ensemble network.
    #[serde(default = "default_fusion_hidden")]
    pub fusion_hidden: usize,
}

fn default_fusion_hidden() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal: FocalParams,
    pub contrastive: ContrastiveParams,
    /// Power-mean exponent of the differentiable rect transform.
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    /// Apply the exact rect transform to prediction maps at eval time.
    #[serde(default)]
    pub exact_rect_postprocess: bool,
}

fn default_sharpness() -> f64 {
    8.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal: FocalParams::default(),
            contrastive: ContrastiveParams::default(),
            sharpness: default_sharpness(),
            exact_rect_postprocess: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        self.contrastive.validate()?;
        if !(self.sharpness.is_finite() && self.sharpness >= 1.0) {
            return Err(Error::config(format!(
                "sharpness must be a finite value >= 1, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }
}

/// Everything a run needs, snapshot into its run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn synthetic_default(dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetConfig {
                dir: dir.into(),
                synthetic: Some(SyntheticSpec::default()),
                split_ratios: default_ratios(),
                n_pairs: default_n_pairs(),
            },
            model: ModelConfig {
                unet: UNetConfig {
                    input_size: 128,
                    depth: 3,
                    base_filters: 8,
                    attention: false,
                    in_channels: 1,
                    bottleneck_extra: 0,
                },
                siamese: SiameseConfig::default(),
                fusion_hidden: default_fusion_hidden(),
            },
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.unet.validate()?;
        self.model.siamese.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::config(format!(
                "eval threshold must be in (0,1), got {}",
                self.eval.threshold
            )));
        }
        Ok(())
    }

    /// Parse a TOML document, then apply `CXSEG_*` environment overrides.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)
            .map_err(|e| Error::config(format!("config parse failed: {e}")))?;
        apply_env_overrides(&mut value, std::env::vars())?;
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::config(format!("config is invalid: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serialize failed: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// Apply overrides of the form `CXSEG_SECTION__KEY=value` to a parsed
/// TOML tree. The key path must already exist; the replacement value is
/// parsed with the type of the value it replaces.
pub fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    for (name, raw) in vars {
        let Some(path) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let segments: Vec<String> = path.split("__").map(|s| s.to_lowercase()).collect();
        let mut node = &mut *value;
        for (i, seg) in segments.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::config(format!("override {name}: {seg} is not a table"))
            })?;
            node = table.get_mut(seg).ok_or_else(|| {
                Error::config(format!(
                    "override {name}: unknown key {}",
                    segments[..=i].join(".")
                ))
            })?;
        }
        *node = parse_like(node, &raw)
            .ok_or_else(|| Error::config(format!("override {name}: cannot parse {raw:?}")))?;
    }
    Ok(())
}

fn parse_like(current: &toml::Value, raw: &str) -> Option<toml::Value> {
    use toml::Value;
    match current {
        Value::Integer(_) => raw.parse().ok().map(Value::Integer),
        Value::Float(_) => raw.parse().ok().map(Value::Float),
        Value::Boolean(_) => raw.parse().ok().map(Value::Boolean),
        Value::String(_) => Some(Value::String(raw.to_string())),
        // arrays (e.g. ranges) are given as comma-separated integers
        Value::Array(items) => {
            let parsed: Option<Vec<Value>> = raw
                .split(',')
                .map(|s| items.first().map_or(None, |v| parse_like(v, s.trim())))
                .collect();
            parsed.map(Value::Array)
        }
        _ => None,
    }
}
