//! Layers, initialization, parameter storage, Adam and the learning-rate
//! schedule.
//!
//! A [`Sequential`] is a list of [`LayerSpec`]s plus a name prefix; its
//! parameters live in a [`ParamStore`] under `"{prefix}.{layer}.{role}"`.
//! A forward pass binds the store to a tape and threads a [`Var`] through
//! the layers.

mod batchnorm;
mod optim;
mod params;

pub use batchnorm::{batch_norm_eval, batch_norm_train, BN_EPS, BN_MOMENTUM};
pub use optim::{lr_at, Adam, AdamConfig, LrSchedule};
pub use params::{Bound, Entry, EntryKind, Mode, ParamStore};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(&self, x: &Var<'t>) -> Result<Var<'t>> {
        match *self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu(s) => x.leaky_relu(s),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// 1×1 convolution.
    PointwiseConv { in_ch: usize, out_ch: usize },
    Activation(Activation),
    BatchNorm { channels: usize },
    /// `[B, …]` → `[B, rest]`.
    Flatten,
    /// `[B, c·h·w]` → `[B, c, h, w]`.
    Unflatten { channels: usize, height: usize, width: usize },
}

fn mismatch(layer: &LayerSpec, input: &[usize]) -> Error {
    Error::shape("forward", format!("{} cannot take input {input:?}", layer.kind()))
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::PointwiseConv { .. } => "pointwise_conv",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Unflatten { .. } => "unflatten",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let conv_out = |n: usize, k: usize, s: usize, p: usize| {
            (n + 2 * p >= k && (n + 2 * p - k).is_multiple_of(s)).then(|| (n + 2 * p - k) / s + 1)
        };
        match (self, input) {
            (&LayerSpec::Conv { in_ch, out_ch, kernel, stride, pad }, &[b, c, h, w]) if c == in_ch => {
                let oh = conv_out(h, kernel, stride, pad).ok_or_else(|| mismatch(self, input))?;
                let ow = conv_out(w, kernel, stride, pad).ok_or_else(|| mismatch(self, input))?;
                Ok(vec![b, out_ch, oh, ow])
            }
            (&LayerSpec::ConvTranspose { in_ch, out_ch, kernel, stride, pad }, &[b, c, h, w])
                if c == in_ch =>
            {
                let up = |n: usize| ((n - 1) * stride + kernel).checked_sub(2 * pad).filter(|&v| v > 0);
                let oh = up(h).ok_or_else(|| mismatch(self, input))?;
                let ow = up(w).ok_or_else(|| mismatch(self, input))?;
                Ok(vec![b, out_ch, oh, ow])
            }
            (&LayerSpec::Dense { in_features, out_features }, &[b, f]) if f == in_features => {
                Ok(vec![b, out_features])
            }
            (&LayerSpec::PointwiseConv { in_ch, out_ch }, &[b, c, h, w]) if c == in_ch => {
                Ok(vec![b, out_ch, h, w])
            }
            (LayerSpec::Activation(_), _) => Ok(input.to_vec()),
            (&LayerSpec::BatchNorm { channels }, &[_, c]) | (&LayerSpec::BatchNorm { channels }, &[_, c, _, _])
                if c == channels =>
            {
                Ok(input.to_vec())
            }
            (LayerSpec::Flatten, &[b, ref rest @ ..]) if !rest.is_empty() => {
                Ok(vec![b, rest.iter().product()])
            }
            (&LayerSpec::Unflatten { channels, height, width }, &[b, f]) if f == channels * height * width => {
                Ok(vec![b, channels, height, width])
            }
            _ => Err(mismatch(self, input)),
        }
    }

    /// Fan-in used by He initialization.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { in_ch, kernel, .. } | LayerSpec::ConvTranspose { in_ch, kernel, .. } => {
                Some(in_ch * kernel * kernel)
            }
            LayerSpec::Dense { in_features, .. } => Some(in_features),
            LayerSpec::PointwiseConv { in_ch, .. } => Some(in_ch),
            _ => None,
        }
    }

    fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv { in_ch, out_ch, kernel, .. } => Some(vec![out_ch, in_ch, kernel, kernel]),
            LayerSpec::ConvTranspose { in_ch, out_ch, kernel, .. } => {
                Some(vec![in_ch, out_ch, kernel, kernel])
            }
            LayerSpec::Dense { in_features, out_features } => Some(vec![in_features, out_features]),
            LayerSpec::PointwiseConv { in_ch, out_ch } => Some(vec![out_ch, in_ch, 1, 1]),
            _ => None,
        }
    }

    fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { out_ch, .. }
            | LayerSpec::ConvTranspose { out_ch, .. }
            | LayerSpec::PointwiseConv { out_ch, .. } => Some(out_ch),
            LayerSpec::Dense { out_features, .. } => Some(out_features),
            _ => None,
        }
    }
}

/// Fresh tensors for one layer: He-uniform weights
/// (`U(±√(6/fan_in))`, variance `2/fan_in`), zero biases, unit batch-norm
/// scale with zero shift and running statistics `(0, 1)`.
pub fn init_params(spec: &LayerSpec, rng: &mut Rng) -> Vec<(&'static str, EntryKind, Tensor)> {
    if let (Some(shape), Some(fan_in), Some(nb)) = (spec.weight_shape(), spec.fan_in(), spec.bias_len()) {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        return vec![
            ("weight", EntryKind::Param, rng.sample_uniform(&shape, -bound, bound)),
            ("bias", EntryKind::Param, Tensor::zeros(&[nb])),
        ];
    }
    match *spec {
        LayerSpec::BatchNorm { channels } => vec![
            ("gamma", EntryKind::Param, Tensor::ones(&[channels])),
            ("beta", EntryKind::Param, Tensor::zeros(&[channels])),
            ("running_mean", EntryKind::Buffer, Tensor::zeros(&[channels])),
            ("running_var", EntryKind::Buffer, Tensor::ones(&[channels])),
        ],
        _ => Vec::new(),
    }
}

/// Ordered layer list whose parameters are named under `prefix`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    pub prefix: String,
    pub layers: Vec<LayerSpec>,
}

impl Sequential {
    pub fn new(prefix: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        Self {
            prefix: prefix.into(),
            layers,
        }
    }

    fn name(&self, layer: usize, role: &str) -> String {
        format!("{}.{layer}.{role}", self.prefix)
    }

    /// Registers freshly initialized parameters for every layer.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            for (role, kind, value) in init_params(layer, rng) {
                store.insert(self.name(i, role), kind, value)?;
            }
        }
        Ok(())
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, layer| layer.output_shape(&shape))
    }

    /// Applies every layer in order; the empty network is the identity.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = self.apply(i, layer, bound, h)?;
        }
        Ok(h)
    }

    fn apply<'t>(&self, i: usize, layer: &LayerSpec, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let out_shape = layer.output_shape(&x.shape())?;
        let param = |role: &str| bound.var(&self.name(i, role));
        let channel_bias = |b: Var<'t>, c: usize| b.reshape(&[1, c, 1, 1]);
        match *layer {
            LayerSpec::Conv { out_ch, stride, pad, .. } => {
                let y = x.conv2d(&param("weight")?, stride, pad)?;
                y.add(&channel_bias(param("bias")?, out_ch)?)
            }
            LayerSpec::PointwiseConv { out_ch, .. } => {
                let y = x.conv2d(&param("weight")?, 1, 0)?;
                y.add(&channel_bias(param("bias")?, out_ch)?)
            }
            LayerSpec::ConvTranspose { out_ch, stride, pad, .. } => {
                let y = x.conv_transpose2d(&param("weight")?, stride, pad)?;
                y.add(&channel_bias(param("bias")?, out_ch)?)
            }
            LayerSpec::Dense { .. } => x.matmul(&param("weight")?)?.add(&param("bias")?),
            LayerSpec::Activation(a) => a.apply(&x),
            LayerSpec::BatchNorm { .. } => {
                let (gamma, beta) = (param("gamma")?, param("beta")?);
                let mean_name = self.name(i, "running_mean");
                let var_name = self.name(i, "running_var");
                let running_mean = bound.var(&mean_name)?.value();
                let running_var = bound.var(&var_name)?.value();
                match bound.mode() {
                    Mode::Train | Mode::Frozen => {
                        let (y, mean, var) = batch_norm_train(&x, &gamma, &beta)?;
                        bound.record_update(mean_name, batchnorm::momentum_update(&running_mean, &mean));
                        bound.record_update(var_name, batchnorm::momentum_update(&running_var, &var));
                        Ok(y)
                    }
                    Mode::Eval => batch_norm_eval(&x, &gamma, &beta, &running_mean, &running_var),
                }
            }
            LayerSpec::Flatten | LayerSpec::Unflatten { .. } => x.reshape(&out_shape),
        }
    }
}
