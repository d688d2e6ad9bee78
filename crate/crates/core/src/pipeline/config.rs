//! Flat `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::Precision;
use crate::transforms::ModelConfig;

/// Where training images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// `synth:COUNT`, generated from the run seed.
    Synthetic { count: usize },
    /// A directory of binary PPM/PGM files.
    Directory(String),
}

impl DatasetSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s.strip_prefix("synth:") {
            Some(n) => {
                let count = n.parse().map_err(|_| Error::Config(format!("bad synthetic image count in {s:?}")))?;
                if count == 0 {
                    return Err(Error::Config("synthetic dataset needs at least one image".into()));
                }
                Ok(DatasetSpec::Synthetic { count })
            }
            None if !s.is_empty() => Ok(DatasetSpec::Directory(s.to_string())),
            None => Err(Error::Config("empty dataset spec".into())),
        }
    }
}

impl std::fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetSpec::Synthetic { count } => write!(f, "synth:{count}"),
            DatasetSpec::Directory(d) => f.write_str(d),
        }
    }
}

/// Every training and model knob. Field names match the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub beta_rate: f64,
    pub snr_db_train: f64,
    pub lr: f64,
    /// Step at which the learning rate is multiplied by 0.1; 0 disables.
    pub lr_decay_step: usize,
    pub batch_size: usize,
    pub steps_stage1: usize,
    pub steps_stage2: usize,
    pub steps_stage3: usize,
    pub seed: u64,
    pub image_size: usize,
    pub dataset: DatasetSpec,
    pub k_min: usize,
    pub k_max: usize,
    pub n_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub n_test: usize,
    pub precision: Precision,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            eta: 0.1,
            lambda: 1e-6,
            beta_rate: 0.1,
            snr_db_train: 10.0,
            lr: 1e-4,
            lr_decay_step: 0,
            batch_size: 4,
            steps_stage1: 500,
            steps_stage2: 500,
            steps_stage3: 500,
            seed: 42,
            image_size: 32,
            dataset: DatasetSpec::Synthetic { count: 64 },
            k_min: 0,
            k_max: model.latent_channels / 2,
            n_train: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
            n_test: crate::diffusion::DEFAULT_TEST_STEPS,
            precision: Precision::F64,
            model,
        }
    }
}

/// Keys that define the network architecture; a checkpoint only loads into a
/// model with identical values.
pub const MODEL_KEYS: [&str; 9] = [
    "latent_channels",
    "hyper_channels",
    "analysis_width",
    "jscc_width",
    "unet_width1",
    "unet_width2",
    "unet_blocks",
    "time_dim",
    "multiscale_cond",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn steps(&self, stage: u8) -> usize {
        match stage {
            1 => self.steps_stage1,
            2 => self.steps_stage2,
            _ => self.steps_stage3,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.n_train, self.beta_start, self.beta_end)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "eta" => self.eta = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "beta_rate" => self.beta_rate = num(key, v)?,
            "snr_db_train" => self.snr_db_train = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "lr_decay_step" => self.lr_decay_step = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "steps_stage1" => self.steps_stage1 = num(key, v)?,
            "steps_stage2" => self.steps_stage2 = num(key, v)?,
            "steps_stage3" => self.steps_stage3 = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "image_size" => self.image_size = num(key, v)?,
            "dataset" => self.dataset = DatasetSpec::parse(v)?,
            "k_min" => self.k_min = num(key, v)?,
            "k_max" => self.k_max = num(key, v)?,
            "n_train" => self.n_train = num(key, v)?,
            "beta_start" => self.beta_start = num(key, v)?,
            "beta_end" => self.beta_end = num(key, v)?,
            "n_test" => self.n_test = num(key, v)?,
            "precision" => self.precision = Precision::from_bits(num(key, v)?).map_err(|e| Error::Config(e.to_string()))?,
            "latent_channels" => self.model.latent_channels = num(key, v)?,
            "hyper_channels" => self.model.hyper_channels = num(key, v)?,
            "analysis_width" => self.model.analysis_width = num(key, v)?,
            "jscc_width" => self.model.jscc_width = num(key, v)?,
            "unet_width1" => self.model.unet_widths.0 = num(key, v)?,
            "unet_width2" => self.model.unet_widths.1 = num(key, v)?,
            "unet_blocks" => self.model.unet_blocks = num(key, v)?,
            "time_dim" => self.model.time_dim = num(key, v)?,
            "multiscale_cond" => self.model.multiscale_cond = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Ordered `(key, value)` pairs; `set` accepts every pair back.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let pairs: Vec<(&str, String)> = vec![
            ("eta", self.eta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("beta_rate", self.beta_rate.to_string()),
            ("snr_db_train", self.snr_db_train.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay_step", self.lr_decay_step.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps_stage1", self.steps_stage1.to_string()),
            ("steps_stage2", self.steps_stage2.to_string()),
            ("steps_stage3", self.steps_stage3.to_string()),
            ("seed", self.seed.to_string()),
            ("image_size", self.image_size.to_string()),
            ("dataset", self.dataset.to_string()),
            ("k_min", self.k_min.to_string()),
            ("k_max", self.k_max.to_string()),
            ("n_train", self.n_train.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("n_test", self.n_test.to_string()),
            ("precision", self.precision.bits().to_string()),
            ("latent_channels", m.latent_channels.to_string()),
            ("hyper_channels", m.hyper_channels.to_string()),
            ("analysis_width", m.analysis_width.to_string()),
            ("jscc_width", m.jscc_width.to_string()),
            ("unet_width1", m.unet_widths.0.to_string()),
            ("unet_width2", m.unet_widths.1.to_string()),
            ("unet_blocks", m.unet_blocks.to_string()),
            ("time_dim", m.time_dim.to_string()),
            ("multiscale_cond", m.multiscale_cond.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` lines over the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.beta_rate > 0.0) {
            return Err(Error::Config(format!("beta_rate must be positive, got {}", self.beta_rate)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % 8 != 0 {
            // the hyper-latent halves the latent grid once more
            return Err(Error::Config(format!("image_size must be a positive multiple of 8, got {}", self.image_size)));
        }
        if self.k_min > self.k_max || 2 * self.k_max > self.model.latent_channels {
            return Err(Error::Config(format!(
                "need k_min <= k_max <= latent_channels / 2, got {} and {}",
                self.k_min, self.k_max
            )));
        }
        if !self.snr_db_train.is_finite() {
            return Err(Error::Config("snr_db_train must be finite".into()));
        }
        self.model.validate()?;
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        if self.n_test == 0 || self.n_test > self.n_train {
            return Err(Error::Config(format!("n_test must lie in 1..={}, got {}", self.n_train, self.n_test)));
        }
        Ok(())
    }

    pub fn model_pairs(&self) -> Vec<(String, String)> {
        self.to_pairs().into_iter().filter(|(k, _)| MODEL_KEYS.contains(&k.as_str())).collect()
    }
}

/// Splits `key = value` lines, dropping blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
