//! Procedural corpora with controllable frequency content.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Pattern family of a synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum Recipe {
    /// Constant images.
    Dc,
    /// Sums of cosines whose radial frequency (as a fraction of Nyquist) is
    /// drawn log-uniformly from an `octaves`-wide band centred on `freq`.
    Grating { freq: f64, octaves: f64 },
    /// Gaussian blobs on a dark background.
    Blobs { count: usize },
    /// Piecewise-constant Voronoi cells.
    Mosaic { cells: usize },
    /// Uniform white noise.
    Noise,
    /// Per-image random choice among gratings, blobs and mosaics.
    Texture,
}

const GRATING_COMPONENTS: usize = 6;

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::Dc => write!(f, "dc"),
            Recipe::Grating { freq, octaves } => write!(f, "grating:{freq}:{octaves}"),
            Recipe::Blobs { count } => write!(f, "blobs:{count}"),
            Recipe::Mosaic { cells } => write!(f, "mosaic:{cells}"),
            Recipe::Noise => write!(f, "noise"),
            Recipe::Texture => write!(f, "texture"),
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    /// `dc`, `grating:FREQ[:OCTAVES]`, `blobs:N`, `mosaic:N`, `noise`, `texture`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad synth recipe {s:?}"));
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let count = |i: usize| -> Result<usize> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let recipe = match (head, args.len()) {
            ("dc", 0) => Recipe::Dc,
            ("noise", 0) => Recipe::Noise,
            ("texture", 0) => Recipe::Texture,
            ("grating", 1) => Recipe::Grating { freq: num(0)?, octaves: 1.0 },
            ("grating", 2) => Recipe::Grating { freq: num(0)?, octaves: num(1)? },
            ("blobs", 1) => Recipe::Blobs { count: count(0)? },
            ("mosaic", 1) => Recipe::Mosaic { cells: count(0)? },
            _ => return Err(bad()),
        };
        recipe.validate()?;
        Ok(recipe)
    }
}

impl Recipe {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Recipe::Grating { freq, octaves } => freq > 0.0 && freq <= 1.0 && (0.0..=4.0).contains(&octaves),
            Recipe::Blobs { count } => count > 0,
            Recipe::Mosaic { cells } => cells > 0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("recipe {self} out of range")))
        }
    }
}

/// Everything needed to regenerate a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub extent: usize,
    pub channels: usize,
    pub recipe: Recipe,
    /// Std of additive Gaussian noise applied before clamping.
    pub noise: f32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(recipe: Recipe, count: usize, extent: usize, seed: u64) -> Self {
        Self { count, extent, channels: 1, recipe, noise: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synth count must be positive".into()));
        }
        if self.extent < 2 || !self.extent.is_power_of_two() {
            return Err(Error::Config(format!("synth extent {} is not a power of two ≥ 2", self.extent)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("synth channels {} must be 1 or 3", self.channels)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("synth noise must be finite and ≥ 0".into()));
        }
        self.recipe.validate()
    }

    /// One-line description used as the dataset source tag.
    pub fn describe(&self) -> String {
        format!(
            "synth recipe={} count={} extent={} channels={} noise={} seed={}",
            self.recipe, self.count, self.extent, self.channels, self.noise, self.seed
        )
    }
}

/// Grayscale pattern in `[0,1]`, row-major `n×n`.
fn pattern(recipe: &Recipe, n: usize, rng: &mut Rng) -> Vec<f64> {
    match *recipe {
        Recipe::Dc => vec![rng.uniform_range(0.1, 0.9); n * n],
        Recipe::Noise => (0..n * n).map(|_| rng.uniform()).collect(),
        Recipe::Grating { freq, octaves } => grating(freq, octaves, n, rng),
        Recipe::Blobs { count } => blobs(count, n, rng),
        Recipe::Mosaic { cells } => mosaic(cells, n, rng),
        Recipe::Texture => {
            let pick = match rng.below(3) {
                0 => Recipe::Grating { freq: 2f64.powf(rng.uniform_range(-4.0, -1.0)), octaves: 1.0 },
                1 => Recipe::Blobs { count: 1 + rng.below(6) },
                _ => Recipe::Mosaic { cells: 3 + rng.below(10) },
            };
            pattern(&pick, n, rng)
        }
    }
}

fn grating(freq: f64, octaves: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    // Radial frequency in cycles per pixel; Nyquist is one half.
    let comps: Vec<(f64, f64, f64)> = (0..GRATING_COMPONENTS)
        .map(|_| {
            let f = 0.5 * freq * 2f64.powf(octaves * (rng.uniform() - 0.5));
            let theta = rng.uniform() * TAU;
            (f * theta.cos(), f * theta.sin(), rng.uniform() * TAU)
        })
        .collect();
    let scale = 0.5 / GRATING_COMPONENTS as f64;
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            let s: f64 = comps.iter().map(|&(fx, fy, ph)| (TAU * (fx * x + fy * y) + ph).cos()).sum();
            0.5 + scale * s
        })
        .collect()
}

fn blobs(count: usize, n: usize, rng: &mut Rng) -> Vec<f64> {
    let nf = n as f64;
    let params: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.uniform() * nf,
                rng.uniform() * nf,
                rng.uniform_range(nf / 16.0, nf / 4.0),
                rng.uniform_range(0.3, 1.0),
            )
        })
        .collect();
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            let v: f64 = params
                .iter()
                .map(|&(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            v.min(1.0)
        })
        .collect()
}

fn mosaic(cells: usize, n: usize, rng: &mut Rng) -> Vec<f64> {
    let nf = n as f64;
    let sites: Vec<(f64, f64, f64)> = (0..cells)
        .map(|_| (rng.uniform() * nf, rng.uniform() * nf, rng.uniform()))
        .collect();
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
            sites
                .iter()
                .map(|&(sx, sy, v)| ((x - sx).powi(2) + (y - sy).powi(2), v))
                .fold((f64::INFINITY, 0.0), |best, c| if c.0 < best.0 { c } else { best })
                .1
        })
        .collect()
}

/// Generates the corpus described by `spec`.
pub fn synth(spec: &SynthSpec) -> Result<ImageDataset> {
    spec.validate()?;
    let n = spec.extent;
    let plane = n * n;
    let mut rng = Rng::new(spec.seed);
    let mut data = Vec::with_capacity(spec.count * spec.channels * plane);
    for _ in 0..spec.count {
        let p = pattern(&spec.recipe, n, &mut rng);
        if spec.channels == 1 {
            data.extend(p.iter().map(|&v| v as f32));
        } else {
            // Interpolate between two random colours.
            let lo: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
            let hi: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
            for c in 0..3 {
                data.extend(p.iter().map(|&v| (lo[c] + (hi[c] - lo[c]) * v) as f32));
            }
        }
    }
    if spec.noise > 0.0 {
        let mut noise = vec![0.0f32; data.len()];
        rng.fill_normal(&mut noise);
        for (v, e) in data.iter_mut().zip(noise) {
            *v += spec.noise * e;
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let images = Tensor::from_vec(vec![spec.count, spec.channels, n, n], data)?;
    ImageDataset::new(images, spec.describe())
}
