use crate::error::{Error, Result};
use crate::models::{posterior, Model};
use crate::nn::ParamStore;
use crate::tensor::{Rng, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn row(t: &Tensor, i: usize, d: usize) -> &[f32] {
    &t.data()[i * d..(i + 1) * d]
}

fn log_density(z: &[f64], mean: &[f32], logvar: &[f32]) -> f64 {
    z.iter()
        .zip(mean.iter().zip(logvar))
        .map(|(&zk, (&m, &lv))| {
            let lv = lv as f64;
            -0.5 * (LN_2PI + lv + (zk - m as f64).powi(2) * (-lv).exp())
        })
        .sum()
}

/// Index-code mutual information from diagonal Gaussian posteriors
/// `[n, d]`, with one sample `z_i ~ q(z|x_i)` per datum.
pub fn index_code_mi_from_posteriors(mean: &Tensor, logvar: &Tensor, rng: &mut Rng) -> Result<f64> {
    if mean.rank() != 2 || mean.shape() != logvar.shape() {
        return Err(Error::shape(
            "index_code_mi",
            format!("posterior shapes {:?} and {:?}", mean.shape(), logvar.shape()),
        ));
    }
    let [n, d] = [mean.shape()[0], mean.shape()[1]];
    let ln_n = (n as f64).ln();
    let mut logq = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let (mu, lv) = (row(mean, i, d), row(logvar, i, d));
        let z: Vec<f64> = mu
            .iter()
            .zip(lv)
            .map(|(&m, &l)| m as f64 + (0.5 * l as f64).exp() * rng.normal())
            .collect();
        for (j, slot) in logq.iter_mut().enumerate() {
            *slot = log_density(&z, row(mean, j, d), row(logvar, j, d));
        }
        let max = logq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logq.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += logq[i] - lse + ln_n;
    }
    let mi = total / n as f64;
    if !mi.is_finite() {
        return Err(Error::NonFinite { op: "index_code_mi" });
    }
    Ok(mi)
}

/// Index-code MI of `model` over `images`, encoding in batches of `batch`.
/// With `max_points`, a random subset of that size is used.
pub fn index_code_mi(
    model: &Model,
    store: &ParamStore,
    images: &Tensor,
    rng: &mut Rng,
    batch: usize,
    max_points: Option<usize>,
) -> Result<f64> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n == 0 || images.rank() != 4 {
        return Err(Error::domain("index_code_mi", "empty dataset"));
    }
    let subset = match max_points {
        Some(m) if m < n => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            idx.truncate(m.max(1));
            Some(images.gather_outer(&idx)?)
        }
        _ => None,
    };
    let images = subset.as_ref().unwrap_or(images);
    let n = images.shape()[0];
    let batch = batch.max(1);
    let mut means = Vec::new();
    let mut logvars = Vec::new();
    for start in (0..n).step_by(batch) {
        let (m, l) = posterior(model, store, &images.slice_outer(start, batch.min(n - start))?)?;
        means.push(m);
        logvars.push(l);
    }
    index_code_mi_from_posteriors(&Tensor::cat_outer(&means)?, &Tensor::cat_outer(&logvars)?, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapsed_posterior_has_zero_mi() {
        let n = 50;
        let mean = Tensor::from_fn(&[n, 3], |i| [0.3, -1.0, 2.0][i % 3]);
        let logvar = Tensor::from_fn(&[n, 3], |i| [0.0, -1.0, 0.5][i % 3]);
        let mi = index_code_mi_from_posteriors(&mean, &logvar, &mut Rng::new(1)).unwrap();
        assert!(mi.abs() < 1e-6, "{mi}");
    }

    #[test]
    fn two_near_deltas_give_log_two() {
        let mean = Tensor::from_vec(vec![2, 1], vec![10.0, -10.0]).unwrap();
        let logvar = Tensor::full(&[2, 1], (1e-4f32).ln());
        let mi = index_code_mi_from_posteriors(&mean, &logvar, &mut Rng::new(2)).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-6, "{mi}");
    }

    #[test]
    fn never_exceeds_log_n() {
        let mut rng = Rng::new(3);
        for n in [2usize, 7, 40] {
            let mean = rng.sample_normal(&[n, 4]).map(|v| 30.0 * v);
            let logvar = rng.sample_uniform(&[n, 4], -8.0, 1.0);
            let mi = index_code_mi_from_posteriors(&mean, &logvar, &mut rng).unwrap();
            assert!(mi <= (n as f64).ln() + 1e-6 && mi > -1e-6, "n={n}: {mi}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(index_code_mi_from_posteriors(&a, &b, &mut Rng::new(0)).is_err());
    }
}
