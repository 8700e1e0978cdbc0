//! Generative models: a Gaussian encoder shared by every variant, an
//! image-space decoder for the VAE baselines, and a wavelet decoder whose
//! heads predict channel-stacked Haar coefficients at one or more levels.
//!
//! Parameters are named `encoder.*` and `decoder.block{k}.*` /
//! `decoder.head{j}.*`, so a wavelet decoder trained inside a VAE and the
//! GAN generator share checkpoint names.

mod losses;
mod train;

pub use losses::{
    bernoulli_nll_with_logits, gaussian_nll, generalized_laplacian_density, kl_to_standard_normal,
    laplacian_nll, reparameterize, reparameterize_with, GaussianPosterior,
};

pub use train::{EpochStats, TrainConfig, VaeTrainer};

use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, LayerSpec, Mode, ParamStore, Sequential};
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::wavelet::{decompose, idwt2_var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Image decoder, unit-variance Gaussian likelihood.
    Vae,
    /// Image decoder with sigmoid output scored by cross-entropy.
    VaeC,
    /// Wavelet decoder predicting the first level only.
    WaveletVae,
    /// Wavelet decoder with heads at several levels.
    WaveletVaeMr,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::VaeC => "vae_c",
            ModelKind::WaveletVae => "wavelet_vae",
            ModelKind::WaveletVaeMr => "wavelet_vae_mr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "vae" => ModelKind::Vae,
            "vae_c" => ModelKind::VaeC,
            "wavelet_vae" => ModelKind::WaveletVae,
            "wavelet_vae_mr" => ModelKind::WaveletVaeMr,
            _ => return None,
        })
    }

    pub fn is_wavelet(&self) -> bool {
        matches!(self, ModelKind::WaveletVae | ModelKind::WaveletVaeMr)
    }
}

/// Network dimensions. Filter counts are free parameters of the
/// InfoGAN-style block family.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Image channels `C`.
    pub channels: usize,
    /// Square image extent `H = W`; divisible by 8.
    pub image_size: usize,
    pub latent_dim: usize,
    /// Output channels of the stride-2 encoder convolutions.
    pub enc_channels: Vec<usize>,
    /// Width of the encoder's hidden dense layer; 0 disables it.
    pub enc_hidden: usize,
    /// Width of the decoder's first dense layer; 0 disables it.
    pub dec_hidden: usize,
    /// Feature channels after decoder blocks 1–3 (at `H/8`, `H/4`, `H/2`).
    pub dec_channels: [usize; 3],
    pub batch_norm: bool,
    /// Number of predicted levels for the multi-resolution decoder (1–3).
    pub mr_levels: usize,
}

impl ArchConfig {
    /// 64×64 configuration with a 64-dimensional latent.
    pub fn large(channels: usize) -> Self {
        Self {
            channels,
            image_size: 64,
            latent_dim: 64,
            enc_channels: vec![64, 128, 256],
            enc_hidden: 1024,
            dec_hidden: 1024,
            dec_channels: [256, 128, 64],
            batch_norm: true,
            mr_levels: 3,
        }
    }

    /// Small configuration for single-core training runs.
    pub fn desk(channels: usize, image_size: usize) -> Self {
        Self {
            channels,
            image_size,
            latent_dim: 16,
            enc_channels: vec![8, 16],
            enc_hidden: 0,
            dec_hidden: 0,
            dec_channels: [16, 8, 8],
            batch_norm: true,
            mr_levels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.latent_dim == 0 {
            return fail("channels and latent_dim must be positive".into());
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(8) {
            return fail(format!("image_size {} must be a positive multiple of 8", self.image_size));
        }
        let down = 1usize << self.enc_channels.len();
        if self.enc_channels.is_empty() || !self.image_size.is_multiple_of(down) {
            return fail(format!(
                "{} encoder convolutions do not divide image_size {}",
                self.enc_channels.len(),
                self.image_size
            ));
        }
        if self.enc_channels.contains(&0) || self.dec_channels.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if !(1..=3).contains(&self.mr_levels) {
            return fail(format!("mr_levels {} outside 1..=3", self.mr_levels));
        }
        Ok(())
    }
}

/// Per-level channel-stacked coefficient predictions; `levels[0]` is `ŷ₁`.
pub struct WaveletPrediction<'t> {
    pub levels: Vec<Var<'t>>,
}

/// Loss terms as minimized quantities.
pub struct ElboBreakdown<'t> {
    /// Gaussian term on approximation coefficients (or on pixels for the VAE,
    /// cross-entropy for VAE-c).
    pub ll_recon: Var<'t>,
    /// Laplacian term on detail coefficients; zero for image decoders.
    pub detail_recon: Var<'t>,
    pub kl: Var<'t>,
    pub beta: f32,
    pub total: Var<'t>,
}

/// Plain values of an [`ElboBreakdown`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboValues {
    pub total: f64,
    pub ll_recon: f64,
    pub detail_recon: f64,
    pub kl: f64,
}

impl ElboBreakdown<'_> {
    pub fn values(&self) -> ElboValues {
        ElboValues {
            total: self.total.item() as f64,
            ll_recon: self.ll_recon.item() as f64,
            detail_recon: self.detail_recon.item() as f64,
            kl: self.kl.item() as f64,
        }
    }
}

/// Likelihood weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the detail (Laplacian) term.
    pub beta: f32,
    /// Per-level multipliers; missing entries default to 1.
    pub level_weights: Vec<f32>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            level_weights: Vec::new(),
        }
    }
}

/// Gaussian encoder: stride-2 convolutions with leaky ReLU (batch norm
/// after all but the first), then dense layers to `2·d` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub net: Sequential,
    pub latent_dim: usize,
}

impl Encoder {
    pub fn new(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let lrelu = LayerSpec::Activation(Activation::LeakyRelu(0.2));
        let mut layers = Vec::new();
        let mut ch = arch.channels;
        for (i, &out) in arch.enc_channels.iter().enumerate() {
            layers.push(LayerSpec::Conv { in_ch: ch, out_ch: out, kernel: 4, stride: 2, pad: 1 });
            if i > 0 && arch.batch_norm {
                layers.push(LayerSpec::BatchNorm { channels: out });
            }
            layers.push(lrelu.clone());
            ch = out;
        }
        let side = arch.image_size >> arch.enc_channels.len();
        let mut features = ch * side * side;
        layers.push(LayerSpec::Flatten);
        if arch.enc_hidden > 0 {
            layers.push(LayerSpec::Dense { in_features: features, out_features: arch.enc_hidden });
            if arch.batch_norm {
                layers.push(LayerSpec::BatchNorm { channels: arch.enc_hidden });
            }
            layers.push(lrelu);
            features = arch.enc_hidden;
        }
        layers.push(LayerSpec::Dense { in_features: features, out_features: 2 * arch.latent_dim });
        Ok(Self {
            net: Sequential::new("encoder", layers),
            latent_dim: arch.latent_dim,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.net.init(store, rng)
    }

    pub fn encode<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<GaussianPosterior<'t>> {
        let h = self.net.forward(bound, x)?;
        let d = self.latent_dim;
        Ok(GaussianPosterior {
            mean: h.narrow(1, 0, d)?,
            logvar: h.narrow(1, d, d)?,
        })
    }
}

/// Transposed-convolution decoder. Blocks 1–3 produce features at `H/8`,
/// `H/4` and `H/2`; block 4 (image decoders) maps to `C×H×W`. Wavelet
/// heads are pointwise convolutions to `4·C` channels on block `4 − j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub blocks: Vec<Sequential>,
    pub heads: Vec<Sequential>,
    pub image_output: bool,
}

impl Decoder {
    /// `levels == 0` builds an image decoder; otherwise heads for levels
    /// `1..=levels`.
    pub fn new(arch: &ArchConfig, levels: usize) -> Result<Self> {
        arch.validate()?;
        if levels > 3 {
            return Err(Error::Config(format!("{levels} wavelet levels requested, at most 3")));
        }
        let bn = |c: usize| arch.batch_norm.then_some(LayerSpec::BatchNorm { channels: c });
        let relu = LayerSpec::Activation(Activation::Relu);
        let [c0, c1, c2] = arch.dec_channels;
        let base = arch.image_size / 8;

        let mut first = Vec::new();
        let mut width = arch.latent_dim;
        if arch.dec_hidden > 0 {
            first.push(LayerSpec::Dense { in_features: width, out_features: arch.dec_hidden });
            first.extend(bn(arch.dec_hidden));
            first.push(relu.clone());
            width = arch.dec_hidden;
        }
        first.push(LayerSpec::Dense { in_features: width, out_features: c0 * base * base });
        first.push(LayerSpec::Unflatten { channels: c0, height: base, width: base });
        first.extend(bn(c0));
        first.push(relu.clone());

        let up = |i: usize, o: usize| LayerSpec::ConvTranspose { in_ch: i, out_ch: o, kernel: 4, stride: 2, pad: 1 };
        let mut second = vec![up(c0, c1)];
        second.extend(bn(c1));
        second.push(relu.clone());
        let mut third = vec![up(c1, c2)];
        third.extend(bn(c2));
        third.push(relu);

        let mut blocks = vec![
            Sequential::new("decoder.block1", first),
            Sequential::new("decoder.block2", second),
            Sequential::new("decoder.block3", third),
        ];
        let mut heads = Vec::new();
        let image_output = levels == 0;
        if image_output {
            blocks.push(Sequential::new("decoder.block4", vec![up(c2, arch.channels)]));
        } else {
            let feature_ch = [c2, c1, c0];
            for j in 1..=levels {
                heads.push(Sequential::new(
                    format!("decoder.head{j}"),
                    vec![LayerSpec::PointwiseConv { in_ch: feature_ch[j - 1], out_ch: 4 * arch.channels }],
                ));
            }
        }
        Ok(Self {
            blocks,
            heads,
            image_output,
        })
    }

    pub fn levels(&self) -> usize {
        self.heads.len()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for s in self.blocks.iter().chain(&self.heads) {
            s.init(store, rng)?;
        }
        Ok(())
    }

    /// Image-space output (pre-squashing logits for VAE-c).
    pub fn decode_image<'t>(&self, bound: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        if !self.image_output {
            return Err(Error::Config("decoder has wavelet heads, not an image block".into()));
        }
        self.blocks.iter().try_fold(z, |h, b| b.forward(bound, h))
    }

    pub fn decode_wavelets<'t>(&self, bound: &Bound<'t>, z: Var<'t>) -> Result<WaveletPrediction<'t>> {
        if self.image_output {
            return Err(Error::Config("image decoder has no wavelet heads".into()));
        }
        let mut features = Vec::with_capacity(3);
        let mut h = z;
        for b in &self.blocks {
            h = b.forward(bound, h)?;
            features.push(h);
        }
        // Head j reads block 4 − j.
        let levels = self
            .heads
            .iter()
            .enumerate()
            .map(|(j, head)| head.forward(bound, features[2 - j]))
            .collect::<Result<_>>()?;
        Ok(WaveletPrediction { levels })
    }

    /// Image from the first-level prediction through the inverse transform.
    pub fn wavelet_image<'t>(&self, bound: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let pred = self.decode_wavelets(bound, z)?;
        idwt2_var(&pred.levels[0])
    }
}

/// Sum over levels of Gaussian (approximation) and β-weighted Laplacian
/// (detail) terms against `decompose(x, J)`, plus the KL term.
pub fn wavelet_elbo<'t>(
    x: &Tensor,
    prediction: &WaveletPrediction<'t>,
    q: &GaussianPosterior<'t>,
    config: &LossConfig,
) -> Result<ElboBreakdown<'t>> {
    let tape = q.mean.tape();
    let depth = prediction.levels.len();
    if depth == 0 {
        return Err(Error::InvalidArgument("empty wavelet prediction".into()));
    }
    let targets = decompose(x, depth)?;
    let c = x.shape()[1];
    let mut ll = tape.constant(Tensor::scalar(0.0));
    let mut detail = tape.constant(Tensor::scalar(0.0));
    for (j, pred) in prediction.levels.iter().enumerate() {
        let target = tape.constant(targets.stacked(j + 1)?);
        if target.shape() != pred.shape() {
            return Err(Error::shape(
                "wavelet_elbo",
                format!("level {}: prediction {:?} vs target {:?}", j + 1, pred.shape(), target.shape()),
            ));
        }
        let weight = config.level_weights.get(j).copied().unwrap_or(1.0);
        let u = gaussian_nll(&target.narrow(1, 0, c)?, &pred.narrow(1, 0, c)?)?;
        let w = laplacian_nll(&target.narrow(1, c, 3 * c)?, &pred.narrow(1, c, 3 * c)?)?;
        ll = ll.add(&u.mul_scalar(weight)?)?;
        detail = detail.add(&w.mul_scalar(weight)?)?;
    }
    let kl = kl_to_standard_normal(q)?;
    let total = ll.add(&detail.mul_scalar(config.beta)?)?.add(&kl)?;
    Ok(ElboBreakdown {
        ll_recon: ll,
        detail_recon: detail,
        kl,
        beta: config.beta,
        total,
    })
}

/// Encoder plus decoder of one [`ModelKind`].
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(kind: ModelKind, arch: ArchConfig) -> Result<Self> {
        let levels = match kind {
            ModelKind::Vae | ModelKind::VaeC => 0,
            ModelKind::WaveletVae => 1,
            ModelKind::WaveletVaeMr => arch.mr_levels,
        };
        Ok(Self {
            encoder: Encoder::new(&arch)?,
            decoder: Decoder::new(&arch, levels)?,
            kind,
            arch,
        })
    }

    pub fn init(&self, rng: &mut Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, rng)?;
        self.decoder.init(&mut store, rng)?;
        Ok(store)
    }

    pub fn image_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.arch.channels, self.arch.image_size, self.arch.image_size]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.image_shape(1)[1..] {
            return Err(Error::shape(
                "model input",
                format!("expected [B,{},{},{}], got {s:?}", self.arch.channels, self.arch.image_size, self.arch.image_size),
            ));
        }
        Ok(())
    }

    pub fn encode<'t>(&self, bound: &Bound<'t>, x: &Tensor) -> Result<GaussianPosterior<'t>> {
        self.check_input(x)?;
        self.encoder.encode(bound, bound.tape().constant(x.clone()))
    }

    /// Decoded image in data space (sigmoid applied for VAE-c).
    pub fn decode<'t>(&self, bound: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        match self.kind {
            ModelKind::Vae => self.decoder.decode_image(bound, z),
            ModelKind::VaeC => self.decoder.decode_image(bound, z)?.sigmoid(),
            ModelKind::WaveletVae | ModelKind::WaveletVaeMr => self.decoder.wavelet_image(bound, z),
        }
    }

    /// Negative ELBO with one reparameterized sample per datum.
    pub fn loss<'t>(
        &self,
        bound: &Bound<'t>,
        x: &Tensor,
        rng: &mut Rng,
        config: &LossConfig,
    ) -> Result<ElboBreakdown<'t>> {
        let q = self.encode(bound, x)?;
        let z = reparameterize(&q, rng)?;
        let tape = bound.tape();
        match self.kind {
            ModelKind::Vae | ModelKind::VaeC => {
                let xv = tape.constant(x.clone());
                let out = self.decoder.decode_image(bound, z)?;
                let recon = if self.kind == ModelKind::Vae {
                    gaussian_nll(&xv, &out)?
                } else {
                    bernoulli_nll_with_logits(&xv, &out)?
                };
                let kl = kl_to_standard_normal(&q)?;
                Ok(ElboBreakdown {
                    total: recon.add(&kl)?,
                    ll_recon: recon,
                    detail_recon: tape.constant(Tensor::scalar(0.0)),
                    kl,
                    beta: config.beta,
                })
            }
            ModelKind::WaveletVae | ModelKind::WaveletVaeMr => {
                let pred = self.decoder.decode_wavelets(bound, z)?;
                wavelet_elbo(x, &pred, &q, config)
            }
        }
    }
}

/// `n` samples from the prior pushed through the decoder in evaluation
/// mode. Wavelet models invert only `ŷ₁`. Values are not clamped.
pub fn generate(model: &Model, store: &ParamStore, rng: &mut Rng, n: usize) -> Result<Tensor> {
    let z = rng.sample_normal(&[n, model.arch.latent_dim]);
    decode_latents(model, store, &z)
}

/// Decodes explicit latent codes `[n, d]` in evaluation mode.
pub fn decode_latents(model: &Model, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
    if z.rank() != 2 || z.shape()[1] != model.arch.latent_dim {
        return Err(Error::shape("decode", format!("latent batch {:?}", z.shape())));
    }
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Eval);
    let out = model.decode(&bound, tape.constant(z.clone()))?;
    Ok((*out.value()).clone())
}

/// Posterior parameters `(μ, logσ²)` of `x` in evaluation mode.
pub fn posterior(model: &Model, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Eval);
    let q = model.encode(&bound, x)?;
    Ok(((*q.mean.value()).clone(), (*q.logvar.value()).clone()))
}

/// Encode, sample, decode.
pub fn reconstruct_input(model: &Model, store: &ParamStore, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Eval);
    let q = model.encode(&bound, x)?;
    let z = reparameterize(&q, rng)?;
    Ok((*model.decode(&bound, z)?.value()).clone())
}

/// Sweep of latent coordinate `dim` over `range` in `steps` points with
/// the other coordinates at `base`. Returns `[steps, C, H, W]`.
pub fn traverse_latent(
    model: &Model,
    store: &ParamStore,
    base: &[f32],
    dim: usize,
    range: (f32, f32),
    steps: usize,
) -> Result<Tensor> {
    let d = model.arch.latent_dim;
    if base.len() != d || dim >= d || steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "traversal of dim {dim} with {steps} steps over a {d}-dimensional code of length {}",
            base.len()
        )));
    }
    let z = Tensor::from_fn(&[steps, d], |i| {
        let (s, k) = (i / d, i % d);
        if k == dim {
            let t = if steps == 1 { 0.0 } else { s as f32 / (steps - 1) as f32 };
            range.0 + t * (range.1 - range.0)
        } else {
            base[k]
        }
    });
    decode_latents(model, store, &z)
}

/// Traversal around the posterior mean of a single image `x[1,C,H,W]`.
pub fn latent_traversal(
    model: &Model,
    store: &ParamStore,
    x: &Tensor,
    dim: usize,
    range: (f32, f32),
    steps: usize,
) -> Result<Tensor> {
    if x.shape().first() != Some(&1) {
        return Err(Error::shape("latent_traversal", "expects a single image"));
    }
    let (mean, _) = posterior(model, store, x)?;
    traverse_latent(model, store, mean.data(), dim, range, steps)
}

pub const DEFAULT_TRAVERSAL_RANGE: (f32, f32) = (-3.0, 3.0);
pub const DEFAULT_TRAVERSAL_STEPS: usize = 10;

/// Clamp to `[0, 1]` for export.
pub fn clamp_unit(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests;
