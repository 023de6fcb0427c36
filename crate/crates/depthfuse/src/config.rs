//! `key=value` configuration covering every model and training field.
//!
//! Files are applied first, then command-line overrides, each through
//! [`RunConfig::set`].

use std::path::Path;

use depthfuse_core::losses::PixelLossKind;
use depthfuse_core::model::{FusionMode, ModelConfig};
use depthfuse_core::train::TrainConfig;

use crate::formats::{FormatError, KeyValues};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Numbered checkpoints are kept for every epoch divisible by this and
    /// for the final epoch. `last.ckpt` is rewritten after every epoch.
    pub keep_checkpoints_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), train: TrainConfig::default(), keep_checkpoints_every: 1 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("expected KEY=VALUE, got `{0}`")]
    Syntax(String),
}

pub const MODEL_KEYS: [&str; 11] = [
    "input_height",
    "input_width",
    "base_channels",
    "encoder_stages",
    "fusion_mode",
    "leaky_alpha",
    "head_bias",
    "h_reciprocal",
    "d_min",
    "d_max",
    "model_seed",
];

pub const RUN_KEYS: [&str; 1] = ["keep_checkpoints_every"];

pub const TRAIN_KEYS: [&str; 24] = [
    "epochs",
    "batch_size",
    "lr0",
    "lr_decay_factor",
    "lr_decay_every",
    "loss_kind",
    "w_ssim",
    "w_edge",
    "w_pixel",
    "ssim_window",
    "ssim_c1",
    "ssim_c2",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "p_flip",
    "p_contrast",
    "p_brightness",
    "contrast_min",
    "contrast_max",
    "brightness_min",
    "brightness_max",
    "augment_seed",
    "shuffle_seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue { key: key.into(), value: value.into() })
}

/// Sets one model field; `Ok(false)` if `key` is not a model key.
pub fn set_model_key(m: &mut ModelConfig, key: &str, value: &str) -> Result<bool, ConfigError> {
    match key {
        "input_height" => m.input_height = parse(key, value)?,
        "input_width" => m.input_width = parse(key, value)?,
        "base_channels" => m.base_channels = parse(key, value)?,
        "encoder_stages" => m.encoder_stages = parse(key, value)?,
        "fusion_mode" => {
            m.fusion_mode = FusionMode::parse(value)
                .ok_or_else(|| ConfigError::InvalidValue { key: key.into(), value: value.into() })?
        }
        "leaky_alpha" => m.leaky_alpha = parse(key, value)?,
        "head_bias" => m.head_bias = parse(key, value)?,
        "h_reciprocal" => m.h_reciprocal = parse(key, value)?,
        "d_min" => m.d_min = parse(key, value)?,
        "d_max" => m.d_max = parse(key, value)?,
        "model_seed" => m.seed = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn model_entries(m: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("input_height", m.input_height.to_string()),
        ("input_width", m.input_width.to_string()),
        ("base_channels", m.base_channels.to_string()),
        ("encoder_stages", m.encoder_stages.to_string()),
        ("fusion_mode", m.fusion_mode.name().to_string()),
        ("leaky_alpha", m.leaky_alpha.to_string()),
        ("head_bias", m.head_bias.to_string()),
        ("h_reciprocal", m.h_reciprocal.to_string()),
        ("d_min", m.d_min.to_string()),
        ("d_max", m.d_max.to_string()),
        ("model_seed", m.seed.to_string()),
    ]
}

fn set_train_key(t: &mut TrainConfig, key: &str, value: &str) -> Result<bool, ConfigError> {
    match key {
        "epochs" => t.epochs = parse(key, value)?,
        "batch_size" => t.batch_size = parse(key, value)?,
        "lr0" => t.schedule.lr0 = parse(key, value)?,
        "lr_decay_factor" => t.schedule.decay_factor = parse(key, value)?,
        "lr_decay_every" => t.schedule.decay_every = parse(key, value)?,
        "loss_kind" => {
            t.loss.kind = PixelLossKind::parse(value)
                .ok_or_else(|| ConfigError::InvalidValue { key: key.into(), value: value.into() })?
        }
        "w_ssim" => t.loss.weights.ssim = parse(key, value)?,
        "w_edge" => t.loss.weights.edge = parse(key, value)?,
        "w_pixel" => t.loss.weights.pixel = parse(key, value)?,
        "ssim_window" => t.loss.ssim.window = parse(key, value)?,
        "ssim_c1" => t.loss.ssim.c1 = parse(key, value)?,
        "ssim_c2" => t.loss.ssim.c2 = parse(key, value)?,
        "adam_beta1" => t.adam.beta1 = parse(key, value)?,
        "adam_beta2" => t.adam.beta2 = parse(key, value)?,
        "adam_epsilon" => t.adam.epsilon = parse(key, value)?,
        "p_flip" => t.augment.p_flip = parse(key, value)?,
        "p_contrast" => t.augment.p_contrast = parse(key, value)?,
        "p_brightness" => t.augment.p_brightness = parse(key, value)?,
        "contrast_min" => t.augment.contrast_range.0 = parse(key, value)?,
        "contrast_max" => t.augment.contrast_range.1 = parse(key, value)?,
        "brightness_min" => t.augment.brightness_range.0 = parse(key, value)?,
        "brightness_max" => t.augment.brightness_range.1 = parse(key, value)?,
        "augment_seed" => t.augment.seed = parse(key, value)?,
        "shuffle_seed" => t.shuffle_seed = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn train_entries(t: &TrainConfig) -> Vec<(&'static str, String)> {
    let a = &t.augment;
    vec![
        ("epochs", t.epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("lr0", t.schedule.lr0.to_string()),
        ("lr_decay_factor", t.schedule.decay_factor.to_string()),
        ("lr_decay_every", t.schedule.decay_every.to_string()),
        ("loss_kind", t.loss.kind.name().to_string()),
        ("w_ssim", t.loss.weights.ssim.to_string()),
        ("w_edge", t.loss.weights.edge.to_string()),
        ("w_pixel", t.loss.weights.pixel.to_string()),
        ("ssim_window", t.loss.ssim.window.to_string()),
        ("ssim_c1", t.loss.ssim.c1.to_string()),
        ("ssim_c2", t.loss.ssim.c2.to_string()),
        ("adam_beta1", t.adam.beta1.to_string()),
        ("adam_beta2", t.adam.beta2.to_string()),
        ("adam_epsilon", t.adam.epsilon.to_string()),
        ("p_flip", a.p_flip.to_string()),
        ("p_contrast", a.p_contrast.to_string()),
        ("p_brightness", a.p_brightness.to_string()),
        ("contrast_min", a.contrast_range.0.to_string()),
        ("contrast_max", a.contrast_range.1.to_string()),
        ("brightness_min", a.brightness_range.0.to_string()),
        ("brightness_max", a.brightness_range.1.to_string()),
        ("augment_seed", a.seed.to_string()),
        ("shuffle_seed", t.shuffle_seed.to_string()),
    ]
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if key == "keep_checkpoints_every" {
            self.keep_checkpoints_every = parse(key, value)?;
            Ok(())
        } else if set_model_key(&mut self.model, key, value)? || set_train_key(&mut self.train, key, value)? {
            Ok(())
        } else {
            Err(ConfigError::UnknownKey(key.into()))
        }
    }

    /// Applies a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax(pair.into()))?;
        self.set(k.trim(), v.trim())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let kv = KeyValues::read(path)?;
        for (k, v, offset) in &kv.entries {
            self.set(k, v).map_err(|e| match e {
                ConfigError::Format(f) => ConfigError::Format(f),
                other => ConfigError::Format(FormatError::Malformed {
                    path: path.to_path_buf(),
                    offset: *offset,
                    reason: other.to_string(),
                }),
            })?;
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = model_entries(&self.model);
        e.extend(train_entries(&self.train));
        e.push(("keep_checkpoints_every", self.keep_checkpoints_every.to_string()));
        e
    }

    /// Serialized form accepted by [`apply_file`](Self::apply_file).
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Sets the model, shuffle and augmentation seeds from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.shuffle_seed = seed.wrapping_add(1);
        self.train.augment.seed = seed.wrapping_add(2);
    }

    pub fn validate(&self) -> depthfuse_core::Result<()> {
        self.model.validate()?;
        if self.keep_checkpoints_every == 0 {
            return Err(depthfuse_core::Error::InvalidArgument("keep_checkpoints_every must be at least 1".into()));
        }
        self.train.validate()
    }
}
