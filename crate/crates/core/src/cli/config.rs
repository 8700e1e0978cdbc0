//! Flat `key = value` run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{hex, Recipe, SynthSpec};
use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanKind};
use crate::metrics::DEFAULT_IQM_DIVISOR;
use crate::models::{ArchConfig, LossConfig, ModelKind, TrainConfig};

/// What a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Vae(ModelKind),
    Gan(GanKind),
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunKind::Vae(k) => f.write_str(k.name()),
            RunKind::Gan(k) => write!(f, "gan_{}", k.name()),
        }
    }
}

impl FromStr for RunKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = ModelKind::parse(s) {
            return Ok(RunKind::Vae(k));
        }
        match s.strip_prefix("gan_") {
            Some(k) => Ok(RunKind::Gan(k.parse()?)),
            None => Err(Error::Config(format!(
                "unknown model {s:?}; expected vae, vae_c, wavelet_vae, wavelet_vae_mr, gan_ns, gan_ls or gan_wclip"
            ))),
        }
    }
}

/// Network width family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchPreset {
    Desk,
    Large,
}

impl FromStr for ArchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(ArchPreset::Desk),
            "large" => Ok(ArchPreset::Large),
            _ => Err(Error::Config(format!("unknown arch {s:?}; expected desk or large"))),
        }
    }
}

impl fmt::Display for ArchPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchPreset::Desk => "desk",
            ArchPreset::Large => "large",
        })
    }
}

/// Every setting of a run. Parsed from text and flags, validated before
/// any compute, and echoed into the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: RunKind,
    /// Dataset path (PGM/PPM folder or packed file), or `synth`.
    pub dataset: String,
    pub synth_recipe: Recipe,
    pub synth_count: usize,
    pub synth_size: usize,
    pub synth_channels: usize,
    pub synth_noise: f32,
    pub synth_seed: u64,
    pub arch: ArchPreset,
    pub latent_dim: usize,
    pub mr_levels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f32,
    pub lr: f32,
    pub halve_every: usize,
    pub shuffle: bool,
    pub flip: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint_every: usize,
    pub threads: usize,
    pub gan_steps: u64,
    /// Zero selects the loss kind's default.
    pub critic_steps: usize,
    pub clip: f32,
    pub gan_lr: f32,
    pub sample_every: u64,
    pub fid_samples: usize,
    pub extractor: String,
    pub extractor_seed: u64,
    pub iqm_divisor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: RunKind::Vae(ModelKind::WaveletVae),
            dataset: "synth".into(),
            synth_recipe: Recipe::Texture,
            synth_count: 512,
            synth_size: 32,
            synth_channels: 1,
            synth_noise: 0.0,
            synth_seed: 0,
            arch: ArchPreset::Desk,
            latent_dim: 16,
            mr_levels: 3,
            epochs: 200,
            batch_size: 100,
            beta: 0.1,
            lr: 1e-3,
            halve_every: 300,
            shuffle: true,
            flip: false,
            seed: 0,
            out: PathBuf::from("run"),
            checkpoint_every: 50,
            threads: 1,
            gan_steps: 500,
            critic_steps: 0,
            clip: 0.01,
            gan_lr: 0.0,
            sample_every: 100,
            fid_samples: 256,
            extractor: "randconv".into(),
            extractor_seed: crate::metrics::DEFAULT_EXTRACTOR_SEED,
            iqm_divisor: DEFAULT_IQM_DIVISOR,
        }
    }
}

/// Keys that change how a run executes but not what it computes; they are
/// left out of the config hash so a run can be resumed with more epochs.
const EXECUTION_KEYS: [&str; 6] = ["out", "threads", "epochs", "gan_steps", "checkpoint_every", "sample_every"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Applies a named dataset preset: `desk`, `cifar` or `celeba`.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "desk" => {
                let keep = (self.out.clone(), self.dataset.clone());
                *self = Self::default();
                (self.out, self.dataset) = keep;
            }
            "cifar" => {
                self.arch = ArchPreset::Large;
                self.latent_dim = 64;
                self.lr = 1e-4;
                self.batch_size = 100;
                self.epochs = 1000;
                self.halve_every = 300;
                self.beta = 5.0;
            }
            "celeba" => {
                self.arch = ArchPreset::Large;
                self.latent_dim = 64;
                self.lr = 1e-4;
                self.batch_size = 100;
                self.epochs = 120;
                self.halve_every = 48;
                self.beta = 1.0;
            }
            _ => return Err(Error::Config(format!("unknown preset {name:?}; expected desk, cifar or celeba"))),
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = v.parse()?,
            "dataset" => self.dataset = v.to_string(),
            "synth_recipe" => self.synth_recipe = v.parse()?,
            "synth_count" => self.synth_count = parse(key, v)?,
            "synth_size" => self.synth_size = parse(key, v)?,
            "synth_channels" => self.synth_channels = parse(key, v)?,
            "synth_noise" => self.synth_noise = parse(key, v)?,
            "synth_seed" => self.synth_seed = parse(key, v)?,
            "arch" => self.arch = v.parse()?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "mr_levels" => self.mr_levels = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "halve_every" => self.halve_every = parse(key, v)?,
            "shuffle" => self.shuffle = parse_bool(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "gan_steps" => self.gan_steps = parse(key, v)?,
            "critic_steps" => self.critic_steps = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "gan_lr" => self.gan_lr = parse(key, v)?,
            "sample_every" => self.sample_every = parse(key, v)?,
            "fid_samples" => self.fid_samples = parse(key, v)?,
            "extractor" => self.extractor = v.to_string(),
            "extractor_seed" => self.extractor_seed = parse(key, v)?,
            "iqm_divisor" => self.iqm_divisor = parse(key, v)?,
            "preset" => self.apply_preset(v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        text.lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let line = raw.split('#').next().unwrap_or_default().trim();
                (!line.is_empty()).then(|| {
                    line.split_once('=')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))
                })
            })
            .collect()
    }

    /// Builds a config from pairs: a `preset` entry is applied first, then
    /// every other pair in order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let mut cfg = Self::default();
        if let Some((_, p)) = pairs.iter().rev().find(|(k, _)| *k == "preset") {
            cfg.apply_preset(p)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| *k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = Self::parse_pairs(text)?;
        Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_text(&text)
    }

    /// Every key in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.model.to_string()),
            ("dataset", self.dataset.clone()),
            ("synth_recipe", self.synth_recipe.to_string()),
            ("synth_count", self.synth_count.to_string()),
            ("synth_size", self.synth_size.to_string()),
            ("synth_channels", self.synth_channels.to_string()),
            ("synth_noise", self.synth_noise.to_string()),
            ("synth_seed", self.synth_seed.to_string()),
            ("arch", self.arch.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("mr_levels", self.mr_levels.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta", self.beta.to_string()),
            ("lr", self.lr.to_string()),
            ("halve_every", self.halve_every.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("flip", self.flip.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("threads", self.threads.to_string()),
            ("gan_steps", self.gan_steps.to_string()),
            ("critic_steps", self.critic_steps.to_string()),
            ("clip", self.clip.to_string()),
            ("gan_lr", self.gan_lr.to_string()),
            ("sample_every", self.sample_every.to_string()),
            ("fid_samples", self.fid_samples.to_string()),
            ("extractor", self.extractor.clone()),
            ("extractor_seed", self.extractor_seed.to_string()),
            ("iqm_divisor", self.iqm_divisor.to_string()),
        ]
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical form without execution-only keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if !EXECUTION_KEYS.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dataset.is_empty() {
            return fail("dataset must be set".into());
        }
        if self.dataset == "synth" {
            self.synth_spec().validate()?;
        }
        if self.latent_dim == 0 || !(1..=3).contains(&self.mr_levels) {
            return fail("latent_dim must be positive and mr_levels in 1..=3".into());
        }
        if self.threads == 0 {
            return fail("threads must be at least 1".into());
        }
        if !(self.iqm_divisor > 0.0 && self.iqm_divisor.is_finite()) {
            return fail(format!("iqm_divisor {} must be positive", self.iqm_divisor));
        }
        if self.checkpoint_every == 0 || self.sample_every == 0 || self.fid_samples < 2 {
            return fail("checkpoint_every and sample_every must be positive, fid_samples ≥ 2".into());
        }
        if self.extractor != "randconv" && self.extractor != "pixels" {
            return fail(format!("unknown extractor {:?}", self.extractor));
        }
        match self.model {
            RunKind::Vae(_) => self.train_config().validate(),
            RunKind::Gan(_) => {
                if self.gan_steps == 0 {
                    return fail("gan_steps must be positive".into());
                }
                self.gan_config().validate()
            }
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.synth_count,
            extent: self.synth_size,
            channels: self.synth_channels,
            recipe: self.synth_recipe.clone(),
            noise: self.synth_noise,
            seed: self.synth_seed,
        }
    }

    /// Architecture for images of `channels × size × size`.
    pub fn arch_for(&self, channels: usize, size: usize) -> ArchConfig {
        let mut arch = match self.arch {
            ArchPreset::Desk => ArchConfig::desk(channels, size),
            ArchPreset::Large => ArchConfig::large(channels),
        };
        arch.image_size = size;
        arch.latent_dim = self.latent_dim;
        arch.mr_levels = self.mr_levels;
        arch
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            halve_every: self.halve_every,
            loss: LossConfig { beta: self.beta, level_weights: Vec::new() },
            shuffle: self.shuffle,
            flip: self.flip,
        }
    }

    pub fn gan_config(&self) -> GanConfig {
        let kind = match self.model {
            RunKind::Gan(k) => k,
            RunKind::Vae(_) => GanKind::NonSaturating,
        };
        let mut g = GanConfig::new(kind);
        g.batch_size = self.batch_size;
        g.clip = self.clip;
        if self.critic_steps > 0 {
            g.critic_steps = self.critic_steps;
        }
        if self.gan_lr > 0.0 {
            g.lr_g = self.gan_lr;
            g.lr_d = self.gan_lr;
        }
        g
    }
}
