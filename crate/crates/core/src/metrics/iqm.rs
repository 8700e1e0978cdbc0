use super::fft::{fft2, fftshift};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_IQM_DIVISOR: f64 = 100.0;

/// Rec. 601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Grayscale plane of one `[C,H,W]` image: channel 0 when `C = 1`, luma
/// when `C = 3`.
pub fn luminance(image: &[f32], channels: usize, h: usize, w: usize) -> Result<Vec<f64>> {
    let p = h * w;
    if image.len() != channels * p {
        return Err(Error::shape("luminance", format!("{} values for {channels}×{h}×{w}", image.len())));
    }
    match channels {
        1 => Ok(image.iter().map(|&v| v as f64).collect()),
        3 => Ok((0..p)
            .map(|i| (0..3).map(|c| LUMA[c] * image[c * p + i] as f64).sum())
            .collect()),
        _ => Err(Error::shape("luminance", format!("{channels} channels; expected 1 or 3"))),
    }
}

/// Largest power-of-two square centered in an `h×w` plane.
pub fn center_crop_pow2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize) {
    let side = h.min(w);
    let n = if side == 0 { 0 } else { 1 << side.ilog2() };
    let (r0, c0) = ((h - n) / 2, (w - n) / 2);
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        out.extend_from_slice(&plane[(r0 + r) * w + c0..][..n]);
    }
    (out, n)
}

/// Fraction of centered Fourier magnitudes strictly above `max / divisor`
/// for one `n×n` plane.
pub fn iqm_plane(plane: &[f64], n: usize, divisor: f64) -> Result<f64> {
    if divisor.is_nan() || divisor <= 0.0 {
        return Err(Error::domain("iqm", format!("divisor {divisor} must be positive")));
    }
    let af = fftshift(&fft2(plane, n)?).magnitudes();
    let m = af.iter().cloned().fold(0.0, f64::max);
    let threshold = m / divisor;
    let count = af.iter().filter(|&&a| a > threshold).count();
    Ok(count as f64 / (n * n) as f64)
}

/// Per-image scores of a `[B,C,H,W]` batch.
pub fn iqm_per_image(images: &Tensor, divisor: f64) -> Result<Vec<f64>> {
    let &[b, c, h, w] = images.shape() else {
        return Err(Error::shape("iqm", format!("need [B,C,H,W], got {:?}", images.shape())));
    };
    let block = c * h * w;
    (0..b)
        .map(|i| {
            let lum = luminance(&images.data()[i * block..][..block], c, h, w)?;
            let (plane, n) = center_crop_pow2(&lum, h, w);
            iqm_plane(&plane, n, divisor)
        })
        .collect()
}

/// Mean per-image IQM.
pub fn iqm(images: &Tensor, divisor: f64) -> Result<f64> {
    let scores = iqm_per_image(images, divisor)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
