//! Adversarial training of the wavelet decoder against an image-space
//! DCGAN discriminator.
//!
//! The generator is the single-level wavelet [`Decoder`]: its `ŷ₁`
//! prediction passes through the inverse Haar transform, so the
//! discriminator only ever sees images. Generator parameters carry the
//! same `decoder.*` names as a Wavelet-VAE checkpoint.

use std::fmt;
use std::str::FromStr;

use crate::data::{batches, ImageDataset};
use crate::error::{Error, Result};
use crate::models::{ArchConfig, Decoder};
use crate::nn::{Activation, Adam, AdamConfig, Bound, EntryKind, LayerSpec, Mode, ParamStore, Sequential};
use crate::tensor::{Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanKind {
    NonSaturating,
    LeastSquares,
    WassersteinClip,
}

impl GanKind {
    pub fn name(&self) -> &'static str {
        match self {
            GanKind::NonSaturating => "ns",
            GanKind::LeastSquares => "ls",
            GanKind::WassersteinClip => "wclip",
        }
    }

    /// Critic updates per generator update.
    pub fn default_critic_steps(&self) -> usize {
        match self {
            GanKind::WassersteinClip => 5,
            _ => 1,
        }
    }
}

impl fmt::Display for GanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ns" | "non_saturating" => Ok(GanKind::NonSaturating),
            "ls" | "least_squares" => Ok(GanKind::LeastSquares),
            "wclip" | "wasserstein_clip" => Ok(GanKind::WassersteinClip),
            _ => Err(Error::Config(format!("unknown GAN loss {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub kind: GanKind,
    /// Weight bound of the clipped critic.
    pub clip: f32,
    pub critic_steps: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    pub beta1: f32,
    pub batch_size: usize,
    /// Output channels of the discriminator's stride-2 convolutions.
    pub disc_channels: Vec<usize>,
}

impl GanConfig {
    pub fn new(kind: GanKind) -> Self {
        let lr = if kind == GanKind::WassersteinClip { 5e-5 } else { 2e-4 };
        Self {
            kind,
            clip: 0.01,
            critic_steps: kind.default_critic_steps(),
            lr_g: lr,
            lr_d: lr,
            beta1: 0.5,
            batch_size: 64,
            disc_channels: vec![16, 32, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.kind == GanKind::WassersteinClip && !(self.clip > 0.0 && self.clip.is_finite()) {
            return fail(format!("clip bound {} must be positive", self.clip));
        }
        if self.critic_steps == 0 {
            return fail("critic_steps must be at least 1".into());
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) || !(0.0..1.0).contains(&self.beta1) {
            return fail("learning rates must be positive and beta1 in [0,1)".into());
        }
        if self.batch_size < 2 || self.disc_channels.is_empty() || self.disc_channels.contains(&0) {
            return fail("batch_size must be ≥ 2 and discriminator widths positive".into());
        }
        Ok(())
    }

    fn adam(&self, lr: f32) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, ..AdamConfig::default() }
    }
}

/// DCGAN-style critic: stride-2 4×4 convolutions with leaky ReLU 0.2 and
/// batch norm after every convolution but the first, then one linear unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Sequential,
}

impl Discriminator {
    pub fn new(channels: usize, image_size: usize, widths: &[usize]) -> Result<Self> {
        let down = 1usize << widths.len();
        if !image_size.is_multiple_of(down) {
            return Err(Error::Config(format!(
                "{} discriminator convolutions do not divide image_size {image_size}",
                widths.len()
            )));
        }
        let mut layers = Vec::new();
        let mut prev = channels;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(LayerSpec::Conv { in_ch: prev, out_ch: w, kernel: 4, stride: 2, pad: 1 });
            if i > 0 {
                layers.push(LayerSpec::BatchNorm { channels: w });
            }
            layers.push(LayerSpec::Activation(Activation::LeakyRelu(0.2)));
            prev = w;
        }
        let side = image_size / down;
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { in_features: prev * side * side, out_features: 1 });
        Ok(Self { net: Sequential::new("disc", layers) })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.net.init(store, rng)
    }

    /// Scores `[B,1]`.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.net.forward(bound, x)
    }
}

/// `z → ŷ₁ → idwt2`; gradients reach the coefficients through the
/// adjoint transform.
pub fn generator_forward<'t>(gen: &Decoder, bound: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
    gen.wavelet_image(bound, z)
}

/// Discriminator loss of `kind`.
pub fn d_loss<'t>(kind: GanKind, d_real: &Var<'t>, d_fake: &Var<'t>) -> Result<Var<'t>> {
    match kind {
        // −log σ(r) = softplus(−r), −log(1 − σ(f)) = softplus(f).
        GanKind::NonSaturating => d_real.neg()?.softplus()?.mean()?.add(&d_fake.softplus()?.mean()?),
        GanKind::LeastSquares => d_real
            .add_scalar(-1.0)?
            .square()?
            .mean()?
            .add(&d_fake.square()?.mean()?)?
            .mul_scalar(0.5),
        GanKind::WassersteinClip => d_fake.mean()?.sub(&d_real.mean()?),
    }
}

/// Generator loss of `kind`.
pub fn g_loss<'t>(kind: GanKind, d_fake: &Var<'t>) -> Result<Var<'t>> {
    match kind {
        GanKind::NonSaturating => d_fake.neg()?.softplus()?.mean(),
        GanKind::LeastSquares => d_fake.add_scalar(-1.0)?.square()?.mean()?.mul_scalar(0.5),
        GanKind::WassersteinClip => d_fake.mean()?.neg(),
    }
}

/// `(d_loss, g_loss)` for one pair of score batches.
pub fn gan_losses<'t>(kind: GanKind, d_real: &Var<'t>, d_fake: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    Ok((d_loss(kind, d_real, d_fake)?, g_loss(kind, d_fake)?))
}

/// Clamps every parameter (not buffer) of `store` to `[−c, c]`.
pub fn clip_weights(store: &mut ParamStore, c: f32) {
    for e in store.params_mut() {
        if e.value.data().iter().any(|v| v.abs() > c) {
            e.value.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
    }
}

/// Largest absolute parameter value.
pub fn max_abs_weight(store: &ParamStore) -> f32 {
    store
        .params()
        .flat_map(|e| e.value.data().iter())
        .fold(0.0f32, |m, v| m.max(v.abs()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GanStepStats {
    /// Mean critic loss over the critic steps.
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    /// Largest critic weight after the last critic step.
    pub max_critic_weight: f32,
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericAbort(format!("{what} is {v}")))
    }
}

/// Generator and critic with separate stores and optimizers.
pub struct GanTrainer {
    pub arch: ArchConfig,
    pub config: GanConfig,
    pub gen: Decoder,
    pub disc: Discriminator,
    pub g_store: ParamStore,
    pub d_store: ParamStore,
    pub g_adam: Adam,
    pub d_adam: Adam,
    pub rng: Rng,
    /// Completed generator updates.
    pub steps: u64,
}

impl GanTrainer {
    pub fn new(arch: ArchConfig, config: GanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let gen = Decoder::new(&arch, 1)?;
        let disc = Discriminator::new(arch.channels, arch.image_size, &config.disc_channels)?;
        let mut rng = Rng::new(seed);
        let mut g_store = ParamStore::new();
        gen.init(&mut g_store, &mut rng)?;
        let mut d_store = ParamStore::new();
        disc.init(&mut d_store, &mut rng)?;
        if config.kind == GanKind::WassersteinClip {
            clip_weights(&mut d_store, config.clip);
        }
        Ok(Self {
            g_adam: Adam::new(config.adam(config.lr_g), &g_store),
            d_adam: Adam::new(config.adam(config.lr_d), &d_store),
            arch,
            config,
            gen,
            disc,
            g_store,
            d_store,
            rng,
            steps: 0,
        })
    }

    fn latent(&mut self, n: usize) -> Tensor {
        self.rng.sample_normal(&[n, self.arch.latent_dim])
    }

    /// One critic update on `real`; returns `(loss, mean real score, mean fake score)`.
    pub fn critic_step(&mut self, real: &Tensor) -> Result<(f64, f64, f64)> {
        let z = self.latent(real.shape()[0]);
        let tape = Tape::new();
        let fake = {
            let g = self.g_store.bind(&tape, Mode::Frozen);
            (*generator_forward(&self.gen, &g, tape.constant(z))?.value()).clone()
        };
        let d = self.d_store.bind(&tape, Mode::Train);
        let d_real = self.disc.forward(&d, tape.constant(real.clone()))?;
        let d_fake = self.disc.forward(&d, tape.constant(fake))?;
        let loss = d_loss(self.config.kind, &d_real, &d_fake)?;
        let value = finite("critic loss", loss.item() as f64)?;
        tape.backward(&loss)?;
        let grads = d.grads();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NumericAbort("non-finite critic gradient".into()));
        }
        let stats = (value, d_real.value().sum_f64() / real.shape()[0] as f64, d_fake.value().sum_f64() / real.shape()[0] as f64);
        let updates = d.into_updates();
        self.d_adam.step(&mut self.d_store, &grads, self.config.lr_d)?;
        self.d_store.apply_updates(updates)?;
        if self.config.kind == GanKind::WassersteinClip {
            clip_weights(&mut self.d_store, self.config.clip);
        }
        Ok(stats)
    }

    /// One generator update on `n` prior samples.
    pub fn generator_step(&mut self, n: usize) -> Result<f64> {
        let z = self.latent(n);
        let tape = Tape::new();
        let g = self.g_store.bind(&tape, Mode::Train);
        let d = self.d_store.bind(&tape, Mode::Frozen);
        let fake = generator_forward(&self.gen, &g, tape.constant(z))?;
        let loss = g_loss(self.config.kind, &self.disc.forward(&d, fake)?)?;
        let value = finite("generator loss", loss.item() as f64)?;
        tape.backward(&loss)?;
        let grads = g.grads();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NumericAbort("non-finite generator gradient".into()));
        }
        let updates = g.into_updates();
        self.g_adam.step(&mut self.g_store, &grads, self.config.lr_g)?;
        self.g_store.apply_updates(updates)?;
        Ok(value)
    }

    /// Critic steps on each of `reals` (one batch per step), then one
    /// generator step.
    pub fn train_step(&mut self, reals: &[Tensor]) -> Result<GanStepStats> {
        if reals.len() != self.config.critic_steps {
            return Err(Error::InvalidArgument(format!(
                "{} real batches for {} critic steps",
                reals.len(),
                self.config.critic_steps
            )));
        }
        let mut stats = GanStepStats::default();
        for real in reals {
            let (l, r, f) = self.critic_step(real)?;
            stats.d_loss += l / reals.len() as f64;
            stats.d_real = r;
            stats.d_fake = f;
        }
        stats.max_critic_weight = max_abs_weight(&self.d_store);
        stats.g_loss = self.generator_step(self.config.batch_size)?;
        self.steps += 1;
        Ok(stats)
    }

    /// `n` generated images in evaluation mode.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        let z = rng.sample_normal(&[n, self.arch.latent_dim]);
        let tape = Tape::new();
        let g = self.g_store.bind(&tape, Mode::Eval);
        Ok((*generator_forward(&self.gen, &g, tape.constant(z))?.value()).clone())
    }

    /// Fraction of `real` scored real plus `fake` scored fake (threshold 0
    /// on the logit), in evaluation mode.
    pub fn discriminator_accuracy(&self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let tape = Tape::new();
        let d = self.d_store.bind(&tape, Mode::Eval);
        let r = self.disc.forward(&d, tape.constant(real.clone()))?.value();
        let f = self.disc.forward(&d, tape.constant(fake.clone()))?.value();
        let hits = r.data().iter().filter(|&&v| v > 0.0).count() + f.data().iter().filter(|&&v| v < 0.0).count();
        Ok(hits as f64 / (r.numel() + f.numel()) as f64)
    }

    /// Runs `steps` generator updates over shuffled passes of `ds`,
    /// calling `on_step` with the one-based step index after each.
    pub fn train(
        &mut self,
        ds: &ImageDataset,
        steps: u64,
        mut on_step: impl FnMut(&Self, u64, &GanStepStats) -> Result<()>,
    ) -> Result<()> {
        let mut data_rng = self.rng.fork();
        let mut pending: Vec<Tensor> = Vec::new();
        let mut epoch = batches(ds, self.config.batch_size, &mut data_rng, true, false)?;
        let target = self.steps + steps;
        while self.steps < target {
            while pending.len() < self.config.critic_steps {
                match epoch.next() {
                    Some(b) => pending.push(b?),
                    None => epoch = batches(ds, self.config.batch_size, &mut data_rng, true, false)?,
                }
            }
            let stats = self.train_step(&pending).map_err(|e| match e {
                Error::NumericAbort(m) => Error::NumericAbort(format!("GAN step {}: {m}", self.steps + 1)),
                other => other,
            })?;
            pending.clear();
            on_step(self, self.steps, &stats)?;
        }
        Ok(())
    }
}

/// Parameter entries that are optimized (not buffers), by name.
pub fn param_names(store: &ParamStore) -> Vec<&str> {
    store
        .entries()
        .iter()
        .filter(|e| e.kind == EntryKind::Param)
        .map(|e| e.name.as_str())
        .collect()
}
