//! Training configuration and its flat `key = value` file format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::GanLossForm;

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_gan: f64,
    pub lambda_cycle: f64,
    pub lambda_pixel: f64,
    pub lambda_tv: f64,
    /// Curriculum weight on reconstruction terms during warm-up.
    pub r_warm: f64,
    pub warm_epochs: usize,
    /// Curriculum weight after warm-up.
    pub r_main: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay_start_epoch: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub image_size: usize,
    /// Multiplier on every filter count (floored, minimum 4).
    pub channel_scale: f64,
    pub seed: u64,
    pub flip_augment: bool,
    pub gan_loss: GanLossForm,
    pub pool_swap_prob: f64,
    /// Put BatchNorm on the first discriminator block as well.
    pub first_block_norm: bool,
    pub attention_generator: bool,
    pub attention_discriminators: bool,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Store replay-pool contents in checkpoints so a resumed run continues exactly.
    pub checkpoint_pools: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_gan: 0.5,
            lambda_cycle: 10.0,
            lambda_pixel: 1.0,
            lambda_tv: 1e-6,
            r_warm: 0.01,
            warm_epochs: 10,
            r_main: 0.5,
            buffer_size: 50,
            batch_size: 1,
            epochs: 200,
            decay_start_epoch: 100,
            lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            image_size: 64,
            channel_scale: 0.5,
            seed: 0,
            flip_augment: true,
            gan_loss: GanLossForm::LeastSquares,
            pool_swap_prob: 0.5,
            first_block_norm: false,
            attention_generator: true,
            attention_discriminators: true,
            checkpoint_every: 1,
            checkpoint_pools: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lambda_gan",
    "lambda_cycle",
    "lambda_pixel",
    "lambda_tv",
    "r_warm",
    "warm_epochs",
    "r_main",
    "buffer_size",
    "batch_size",
    "epochs",
    "decay_start_epoch",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "image_size",
    "channel_scale",
    "seed",
    "flip_augment",
    "gan_loss",
    "pool_swap_prob",
    "first_block_norm",
    "attention_generator",
    "attention_discriminators",
    "checkpoint_every",
    "checkpoint_pools",
];

fn parse<V: FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

impl TrainConfig {
    /// Full-resolution, full-width architecture.
    pub fn full_scale() -> Self {
        TrainConfig {
            image_size: 256,
            channel_scale: 1.0,
            ..Default::default()
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "lambda_gan" => self.lambda_gan = parse(key, v)?,
            "lambda_cycle" => self.lambda_cycle = parse(key, v)?,
            "lambda_pixel" => self.lambda_pixel = parse(key, v)?,
            "lambda_tv" => self.lambda_tv = parse(key, v)?,
            "r_warm" => self.r_warm = parse(key, v)?,
            "warm_epochs" => self.warm_epochs = parse(key, v)?,
            "r_main" => self.r_main = parse(key, v)?,
            "buffer_size" => self.buffer_size = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "decay_start_epoch" => self.decay_start_epoch = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "channel_scale" => self.channel_scale = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "flip_augment" => self.flip_augment = parse(key, v)?,
            "gan_loss" => self.gan_loss = parse(key, v)?,
            "pool_swap_prob" => self.pool_swap_prob = parse(key, v)?,
            "first_block_norm" => self.first_block_norm = parse(key, v)?,
            "attention_generator" => self.attention_generator = parse(key, v)?,
            "attention_discriminators" => self.attention_discriminators = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "checkpoint_pools" => self.checkpoint_pools = parse(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Textual value of one key, in a form [`TrainConfig::set`] parses back exactly.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda_gan" => format!("{:?}", self.lambda_gan),
            "lambda_cycle" => format!("{:?}", self.lambda_cycle),
            "lambda_pixel" => format!("{:?}", self.lambda_pixel),
            "lambda_tv" => format!("{:?}", self.lambda_tv),
            "r_warm" => format!("{:?}", self.r_warm),
            "warm_epochs" => self.warm_epochs.to_string(),
            "r_main" => format!("{:?}", self.r_main),
            "buffer_size" => self.buffer_size.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "decay_start_epoch" => self.decay_start_epoch.to_string(),
            "lr" => format!("{:?}", self.lr),
            "adam_beta1" => format!("{:?}", self.adam_beta1),
            "adam_beta2" => format!("{:?}", self.adam_beta2),
            "image_size" => self.image_size.to_string(),
            "channel_scale" => format!("{:?}", self.channel_scale),
            "seed" => self.seed.to_string(),
            "flip_augment" => self.flip_augment.to_string(),
            "gan_loss" => self.gan_loss.to_string(),
            "pool_swap_prob" => format!("{:?}", self.pool_swap_prob),
            "first_block_norm" => self.first_block_norm.to_string(),
            "attention_generator" => self.attention_generator.to_string(),
            "attention_discriminators" => self.attention_discriminators.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "checkpoint_pools" => self.checkpoint_pools.to_string(),
            _ => return None,
        })
    }

    /// Parses the config file format on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines onto `self`. Unknown and repeated keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
            self.set(key, value).map_err(|message| Error::Config {
                line: line_no,
                message,
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        for (name, v) in [
            ("lambda_gan", self.lambda_gan),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_pixel", self.lambda_pixel),
            ("lambda_tv", self.lambda_tv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("r_warm", self.r_warm),
            ("r_main", self.r_main),
            ("pool_swap_prob", self.pool_swap_prob),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.image_size < 32 || !self.image_size.is_multiple_of(4) {
            return bad(format!(
                "image_size must be a multiple of 4 and at least 32, got {}",
                self.image_size
            ));
        }
        if !(self.channel_scale > 0.0 && self.channel_scale <= 1.0) {
            return bad(format!("channel_scale must lie in (0, 1], got {}", self.channel_scale));
        }
        if self.attention_discriminators && !self.attention_generator {
            return bad("attention discriminators require the attention generator".into());
        }
        Ok(())
    }

    /// Curriculum weight in effect during `epoch` (0-based).
    pub fn r_at(&self, epoch: usize) -> f64 {
        if epoch < self.warm_epochs {
            self.r_warm
        } else {
            self.r_main
        }
    }

    /// Learning rate during `epoch`: constant, then linear decay reaching 0 at `epochs`.
    /// Runs shorter than `decay_start_epoch` never decay.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start_epoch {
            self.lr
        } else if self.epochs <= self.decay_start_epoch {
            0.0
        } else {
            let span = (self.epochs - self.decay_start_epoch) as f64;
            let left = self.epochs.saturating_sub(epoch) as f64;
            self.lr * left / span
        }
    }
}
