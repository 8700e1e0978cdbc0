//! Shared oracles for the integration suites.
#![allow(dead_code)]

use wavelet_vae::tensor::{Rng, Tape, Tensor, Var};
use wavelet_vae::Result;

pub const FD_STEP: f32 = 1e-3;

/// Gradient norms below this are indistinguishable from finite-difference
/// round-off, so the relative error is taken against this floor instead.
pub const NOISE_FLOOR: f64 = 1e-3;

/// Central-difference gradient check of `f` at `inputs`.
///
/// The scalar probed is `L = Σ f(inputs) ⊙ r` for a fixed random `r`,
/// accumulated in `f64`. Returns one norm-wise relative error
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, NOISE_FLOOR)` per input, computed
/// over at most `max_probe` randomly chosen coordinates of that input.
pub fn fd_check<F>(inputs: &[Tensor], f: F, seed: u64, max_probe: usize) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let mut rng = Rng::new(seed);
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars)?.shape()
    };
    let weights = rng.sample_normal(&out_shape);

    let probe = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&vars)?.value();
        Ok(out
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum())
    };

    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&leaves)?;
    let loss = out.mul(&tape.constant(weights.clone()))?.sum()?;
    tape.backward(&loss)?;

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = leaves[i].grad().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut coords: Vec<usize> = (0..input.numel()).collect();
        rng.shuffle(&mut coords);
        coords.truncate(max_probe);
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for &k in &coords {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let x = input.data()[k];
            plus[i].data_mut()[k] = x + FD_STEP;
            minus[i].data_mut()[k] = x - FD_STEP;
            let h = (plus[i].data()[k] as f64) - (minus[i].data()[k] as f64);
            let numeric = (probe(&plus)? - probe(&minus)?) / h;
            let a = analytic.data()[k] as f64;
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt()).max(NOISE_FLOOR);
        errors.push(diff.sqrt() / scale);
    }
    Ok(errors)
}

/// Normal tensor with every entry pushed at least `margin` away from zero,
/// for ops with a kink at the origin.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], margin: f32) -> Tensor {
    rng.sample_normal(shape)
        .map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

use wavelet_vae::nn::{Bound, EntryKind, Mode, ParamStore};

/// Finite-difference check of a scalar `loss` with respect to every
/// parameter of `store`, bound in training mode. Returns
/// `(name, relative error)` pairs.
pub fn fd_check_store<F>(store: &ParamStore, loss: F, max_probe: usize) -> Result<Vec<(String, f64)>>
where
    F: for<'t> Fn(&Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Train);
    tape.backward(&loss(&bound)?)?;
    let grads = bound.grads();
    let eval = |s: &ParamStore| -> Result<f64> {
        let t = Tape::new();
        Ok(loss(&s.bind(&t, Mode::Train))?.item() as f64)
    };
    let mut rng = Rng::new(17);
    let mut out = Vec::new();
    for (ei, entry) in store.entries().iter().enumerate() {
        if entry.kind != EntryKind::Param {
            continue;
        }
        let analytic = grads[ei].clone().unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
        let mut coords: Vec<usize> = (0..entry.value.numel()).collect();
        rng.shuffle(&mut coords);
        coords.truncate(max_probe);
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for &k in &coords {
            let shifted = |d: f32| -> Result<(ParamStore, f32)> {
                let mut s = store.clone();
                let mut t = entry.value.clone();
                t.data_mut()[k] += d;
                let v = t.data()[k];
                s.set(&entry.name, t)?;
                Ok((s, v))
            };
            let (plus, hi) = shifted(FD_STEP)?;
            let (minus, lo) = shifted(-FD_STEP)?;
            let numeric = (eval(&plus)? - eval(&minus)?) / (hi as f64 - lo as f64);
            let a = analytic.data()[k] as f64;
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt()).max(NOISE_FLOOR);
        out.push((entry.name.clone(), diff.sqrt() / scale));
    }
    Ok(out)
}

/// Outcome of a kink-screened check for one parameter entry.
#[derive(Debug)]
pub struct EntryCheck {
    pub name: String,
    pub error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// Sums over checked coordinates, for pooling across entries.
    pub sq_diff: f64,
    pub sq_analytic: f64,
    pub sq_numeric: f64,
}

/// Finite-difference check for piecewise-smooth losses (ReLU, L1).
///
/// A coordinate whose forward and backward one-sided differences disagree
/// has a kink within `FD_STEP` and is skipped; the remaining ones are
/// compared as in [`fd_check_store`], with the noise floor raised to the
/// f32 round-off of the loss, `|L|·ε/h` per coordinate.
pub fn fd_check_store_screened<F>(store: &ParamStore, loss: F, max_probe: usize) -> Result<Vec<EntryCheck>>
where
    F: for<'t> Fn(&Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Train);
    let l0 = loss(&bound)?;
    let base = l0.item() as f64;
    tape.backward(&l0)?;
    let grads = bound.grads();
    let eval = |s: &ParamStore| -> Result<f64> {
        let t = Tape::new();
        Ok(loss(&s.bind(&t, Mode::Train))?.item() as f64)
    };
    let h = FD_STEP as f64;
    let roundoff = base.abs() * f32::EPSILON as f64 / h;
    let mut rng = Rng::new(17);
    let mut out = Vec::new();
    for (ei, entry) in store.entries().iter().enumerate() {
        if entry.kind != EntryKind::Param {
            continue;
        }
        let analytic = grads[ei].clone().unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
        let mut coords: Vec<usize> = (0..entry.value.numel()).collect();
        rng.shuffle(&mut coords);
        coords.truncate(max_probe);
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        let (mut checked, mut skipped) = (0, 0);
        for &k in &coords {
            let shifted = |d: f32| -> Result<f64> {
                let mut s = store.clone();
                let mut t = entry.value.clone();
                t.data_mut()[k] += d;
                s.set(&entry.name, t)?;
                eval(&s)
            };
            let (plus, minus) = (shifted(FD_STEP)?, shifted(-FD_STEP)?);
            let (fwd, bwd) = ((plus - base) / h, (base - minus) / h);
            if (fwd - bwd).abs() > 0.01 * fwd.abs().max(bwd.abs()) + 4.0 * roundoff {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (fwd + bwd) / 2.0;
            let a = analytic.data()[k] as f64;
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let floor = NOISE_FLOOR.max(roundoff * (checked as f64).sqrt());
        let scale = na.sqrt().max(nn.sqrt()).max(floor);
        out.push(EntryCheck {
            name: entry.name.clone(),
            error: diff.sqrt() / scale,
            checked,
            skipped,
            sq_diff: diff,
            sq_analytic: na,
            sq_numeric: nn,
        });
    }
    Ok(out)
}
