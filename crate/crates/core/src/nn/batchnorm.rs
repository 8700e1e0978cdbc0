use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tensor, Var};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// `(batch, channels, spatial)` of a `[B,C]` or `[B,C,H,W]` activation.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c] => Ok((b, c, 1)),
        [b, c, h, w] => Ok((b, c, h * w)),
        _ => Err(Error::shape("batch_norm", format!("need [B,C] or [B,C,H,W], got {shape:?}"))),
    }
}

fn channel_view(c: usize, rank: usize) -> Vec<usize> {
    let mut s = vec![1; rank];
    s[1] = c;
    s
}

struct BatchNormOp {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    dims: (usize, usize, usize),
}

impl CustomOp for BatchNormOp {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, grad_out: &Tensor, inputs: &[Rc<Tensor>]) -> Result<Vec<Tensor>> {
        let (b, c, p) = self.dims;
        let gamma = inputs[1].data();
        let dy = grad_out.data();
        let m = (b * p) as f64;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        // Planes are laid out [B, C], so plane j belongs to channel j % c.
        for (j, (gp, xp)) in dy.chunks_exact(p).zip(self.xhat.chunks_exact(p)).enumerate() {
            let ch = j % c;
            for (&g, &xh) in gp.iter().zip(xp) {
                sum_dy[ch] += g as f64;
                sum_dy_xhat[ch] += g as f64 * xh as f64;
            }
        }
        let mut dx = vec![0.0f32; dy.len()];
        for i in 0..b {
            for ch in 0..c {
                let scale = gamma[ch] as f64 * self.inv_std[ch] as f64 / m;
                let base = (i * c + ch) * p;
                for k in base..base + p {
                    let v = m * dy[k] as f64 - sum_dy[ch] - self.xhat[k] as f64 * sum_dy_xhat[ch];
                    dx[k] = (scale * v) as f32;
                }
            }
        }
        let to_t = |v: Vec<f64>| Tensor::from_vec(vec![c], v.into_iter().map(|x| x as f32).collect());
        Ok(vec![
            Tensor::from_vec(inputs[0].shape().to_vec(), dx)?,
            to_t(sum_dy_xhat)?,
            to_t(sum_dy)?,
        ])
    }
}

/// Batch-statistics normalization; returns the output and the batch mean
/// and unbiased variance per channel.
pub fn batch_norm_train<'t>(
    x: &Var<'t>,
    gamma: &Var<'t>,
    beta: &Var<'t>,
) -> Result<(Var<'t>, Vec<f32>, Vec<f32>)> {
    let xv = x.value();
    let dims @ (b, c, p) = layout(xv.shape())?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("batch_norm", format!("affine parameters must be [{c}]")));
    }
    let m = b * p;
    if m < 2 {
        return Err(Error::shape("batch_norm", "training statistics need at least two values per channel"));
    }
    let data = xv.data();
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for (j, plane) in data.chunks_exact(p).enumerate() {
        mean[j % c] += plane.iter().map(|&v| v as f64).sum::<f64>();
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    for (j, plane) in data.chunks_exact(p).enumerate() {
        let mu = mean[j % c];
        var[j % c] += plane.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
    }
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&s| (1.0 / (s / m as f64 + BN_EPS as f64).sqrt()) as f32)
        .collect();
    let (g, bt) = (gamma.value(), beta.value());
    let mut xhat = vec![0.0f32; data.len()];
    let mut out = vec![0.0f32; data.len()];
    for i in 0..b {
        for ch in 0..c {
            let base = (i * c + ch) * p;
            for k in base..base + p {
                xhat[k] = ((data[k] as f64 - mean[ch]) * inv_std[ch] as f64) as f32;
                out[k] = g.data()[ch] * xhat[k] + bt.data()[ch];
            }
        }
    }
    let value = Tensor::from_vec(xv.shape().to_vec(), out)?;
    let op = BatchNormOp { xhat, inv_std, dims };
    let y = x.tape().custom(&[*x, *gamma, *beta], value, Box::new(op))?;
    let unbiased = var.iter().map(|&s| (s / (m - 1) as f64) as f32).collect();
    Ok((y, mean.iter().map(|&v| v as f32).collect(), unbiased))
}

/// Normalization with fixed running statistics.
pub fn batch_norm_eval<'t>(
    x: &Var<'t>,
    gamma: &Var<'t>,
    beta: &Var<'t>,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Var<'t>> {
    let shape = x.shape();
    let (_, c, _) = layout(&shape)?;
    let view = channel_view(c, shape.len());
    let tape = x.tape();
    let mean = tape.constant(running_mean.reshape(&view)?);
    let inv_std = tape.constant(running_var.map(|v| 1.0 / (v + BN_EPS).sqrt()).reshape(&view)?);
    x.sub(&mean)?
        .mul(&inv_std)?
        .mul(&gamma.reshape(&view)?)?
        .add(&beta.reshape(&view)?)
}

/// Exponential moving average step for running statistics.
pub fn momentum_update(running: &Tensor, batch: &[f32]) -> Tensor {
    Tensor::from_fn(running.shape(), |i| {
        (1.0 - BN_MOMENTUM) * running.data()[i] + BN_MOMENTUM * batch[i]
    })
}
