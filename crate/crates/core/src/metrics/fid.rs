use log::warn;

use super::linalg::{matmul_f64, matrix_sqrt_psd, symmetric_eigen};
use super::MetricReport;
use crate::error::{Error, Result};
use crate::tensor::kernels::{conv2d_forward, ConvGeom};
use crate::tensor::{Rng, Tensor};

/// Default seed of the random convolutional feature extractor.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5EED_F1D0;
/// Feature dimension of [`RandomConvFeatures`].
pub const RANDOM_CONV_DIM: usize = 256;

const CHUNK: usize = 64;

/// Sample mean and covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `D×D`.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean and unbiased covariance of `n` row-major `dim`-vectors.
pub fn gaussian_stats(features: &[f64], dim: usize) -> Result<GaussianStats> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(Error::shape(
            "gaussian_stats",
            format!("{} values do not split into {dim}-vectors", features.len()),
        ));
    }
    let n = features.len() / dim;
    if n < 2 {
        return Err(Error::domain("gaussian_stats", format!("need at least 2 samples, got {n}")));
    }
    let mut mean = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    Ok(GaussianStats { mean, cov })
}

/// Fréchet distance between two Gaussians, using the symmetric product
/// `Σr^½ Σg Σr^½` for the cross term.
pub fn frechet_distance(r: &GaussianStats, g: &GaussianStats) -> Result<f64> {
    let d = r.dim();
    if g.dim() != d || r.cov.len() != d * d || g.cov.len() != d * d {
        return Err(Error::shape(
            "frechet_distance",
            format!("dimensions {} vs {}", r.dim(), g.dim()),
        ));
    }
    let dmu: f64 = r.mean.iter().zip(&g.mean).map(|(a, b)| (a - b).powi(2)).sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();
    let root_r = matrix_sqrt_psd(&r.cov, d)?;
    let mut inner = matmul_f64(&matmul_f64(&root_r, &g.cov, d), &root_r, d);
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = s;
            inner[j * d + i] = s;
        }
    }
    let (vals, _) = symmetric_eigen(&inner, d)?;
    let cross: f64 = vals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let value = dmu + trace(&r.cov) + trace(&g.cov) - 2.0 * cross;
    if value < 0.0 {
        warn!("Fréchet distance {value:e} is negative from round-off, clamping to 0");
        return Ok(0.0);
    }
    Ok(value)
}

/// Maps a batch `[B,C,H,W]` to `B` feature rows.
pub trait FeatureExtractor {
    /// Versioned identifier recorded in reports.
    fn id(&self) -> String;
    fn dim(&self, channels: usize) -> usize;
    /// Row-major `B × dim` features.
    fn extract(&self, images: &Tensor) -> Result<Vec<f64>>;
}

fn check_images(op: &'static str, images: &Tensor) -> Result<()> {
    if images.rank() != 4 {
        return Err(Error::shape(op, format!("expected [B,C,H,W], got {:?}", images.shape())));
    }
    Ok(())
}

/// Mean over a `bins×bins` grid of cells; cell `r` spans rows
/// `[r·h/bins, (r+1)·h/bins)`.
fn adaptive_avg_pool(plane: &[f32], h: usize, w: usize, bins: usize, out: &mut Vec<f64>) {
    let span = |i: usize, len: usize| (i * len / bins, ((i + 1) * len / bins).max(i * len / bins + 1).min(len));
    for br in 0..bins {
        let (r0, r1) = span(br, h);
        for bc in 0..bins {
            let (c0, c1) = span(bc, w);
            let s: f64 = (r0..r1)
                .map(|r| plane[r * w + c0..r * w + c1].iter().map(|&v| v as f64).sum::<f64>())
                .sum();
            out.push(s / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
}

/// Two fixed random 4×4 stride-2 convolutions with ReLU, then a 2×2
/// average pool over 64 channels: 256 features.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures {
    pub seed: u64,
}

impl Default for RandomConvFeatures {
    fn default() -> Self {
        Self { seed: DEFAULT_EXTRACTOR_SEED }
    }
}

const RC_WIDTHS: [usize; 2] = [32, 64];

impl RandomConvFeatures {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn kernels(&self, channels: usize) -> [Tensor; 2] {
        // Weights depend only on the seed and the input channel count.
        let mut rng = Rng::new(self.seed ^ (channels as u64).wrapping_mul(0x9E37_79B9));
        let mut make = |out: usize, inp: usize| {
            let std = (2.0 / (inp * 16) as f32).sqrt();
            rng.sample_normal(&[out, inp, 4, 4]).map(|v| v * std)
        };
        let k1 = make(RC_WIDTHS[0], channels);
        let k2 = make(RC_WIDTHS[1], RC_WIDTHS[0]);
        [k1, k2]
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn id(&self) -> String {
        format!("randconv-v1-s{}-d{RANDOM_CONV_DIM}", self.seed)
    }

    fn dim(&self, _channels: usize) -> usize {
        RANDOM_CONV_DIM
    }

    fn extract(&self, images: &Tensor) -> Result<Vec<f64>> {
        check_images("random_conv_features", images)?;
        let [b, c, _, _] = images.shape().try_into().expect("rank 4");
        let kernels = self.kernels(c);
        let mut out = Vec::with_capacity(b * RANDOM_CONV_DIM);
        for start in (0..b).step_by(CHUNK) {
            let mut x = images.slice_outer(start, CHUNK.min(b - start))?;
            for k in &kernels {
                let g = ConvGeom::forward(x.shape(), k.shape(), 2, 1)?;
                let mut y = conv2d_forward(x.data(), k.data(), &g);
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                x = Tensor::from_vec(vec![g.batch, g.out_ch, g.oh, g.ow], y)?;
            }
            let [_, ch, h, w] = x.shape().try_into().expect("rank 4");
            for plane in x.data().chunks_exact(h * w) {
                adaptive_avg_pool(plane, h, w, 2, &mut out);
            }
            debug_assert_eq!(ch * 4, RANDOM_CONV_DIM);
        }
        Ok(out)
    }
}

/// Area-downsampled 8×8 pixels per channel.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelFeatures;

impl FeatureExtractor for PixelFeatures {
    fn id(&self) -> String {
        "pixels8x8".into()
    }

    fn dim(&self, channels: usize) -> usize {
        channels * 64
    }

    fn extract(&self, images: &Tensor) -> Result<Vec<f64>> {
        check_images("pixel_features", images)?;
        let [b, c, h, w] = images.shape().try_into().expect("rank 4");
        let mut out = Vec::with_capacity(b * c * 64);
        for plane in images.data().chunks_exact(h * w) {
            adaptive_avg_pool(plane, h, w, 8, &mut out);
        }
        Ok(out)
    }
}

/// Extractor selected by name: `randconv` (default) or `pixels`.
pub fn extractor_by_name(name: &str, seed: u64) -> Result<Box<dyn FeatureExtractor>> {
    match name {
        "randconv" => Ok(Box::new(RandomConvFeatures::new(seed))),
        "pixels" => Ok(Box::new(PixelFeatures)),
        other => Err(Error::InvalidArgument(format!("unknown feature extractor {other:?}"))),
    }
}

/// Feature statistics of an image batch.
pub fn image_stats(images: &Tensor, extractor: &dyn FeatureExtractor) -> Result<GaussianStats> {
    check_images("fid", images)?;
    let dim = extractor.dim(images.shape()[1]);
    let n = images.shape()[0];
    if n < 2 {
        return Err(Error::domain("fid", format!("need at least 2 images, got {n}")));
    }
    if n < dim / 4 {
        warn!("FID with {n} samples for {dim} features: covariance is ill-conditioned");
    }
    gaussian_stats(&extractor.extract(images)?, dim)
}

/// FID between real and generated image batches under `extractor`.
pub fn fid(real: &Tensor, generated: &Tensor, extractor: &dyn FeatureExtractor) -> Result<MetricReport> {
    if real.rank() == 4 && generated.rank() == 4 && real.shape()[1] != generated.shape()[1] {
        return Err(Error::shape("fid", "real and generated channel counts differ"));
    }
    let r = image_stats(real, extractor)?;
    let g = image_stats(generated, extractor)?;
    let value = frechet_distance(&r, &g)?;
    Ok(MetricReport::new("fid", value, real.shape()[0], generated.shape()[0])
        .with_extractor(extractor.id()))
}
