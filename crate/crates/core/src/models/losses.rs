use crate::error::{Error, Result};
use crate::tensor::{Rng, Var};

/// Diagonal Gaussian recognition distribution `q(z|x)`.
#[derive(Clone, Copy)]
pub struct GaussianPosterior<'t> {
    pub mean: Var<'t>,
    pub logvar: Var<'t>,
}

impl<'t> GaussianPosterior<'t> {
    pub fn latent_dim(&self) -> usize {
        self.mean.shape()[1]
    }
}

fn batch_of(op: &'static str, v: &Var<'_>) -> Result<f32> {
    v.shape()
        .first()
        .map(|&b| b as f32)
        .ok_or_else(|| Error::shape(op, "rank-0 input has no batch axis"))
}

fn check_same(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `z = μ + exp(½·logσ²) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<'t>(q: &GaussianPosterior<'t>, rng: &mut Rng) -> Result<Var<'t>> {
    let eps = rng.sample_normal(&q.mean.shape());
    reparameterize_with(q, eps)
}

/// [`reparameterize`] with caller-supplied noise.
pub fn reparameterize_with<'t>(
    q: &GaussianPosterior<'t>,
    eps: crate::tensor::Tensor,
) -> Result<Var<'t>> {
    let tape = q.mean.tape();
    let std = q.logvar.mul_scalar(0.5)?.exp()?;
    q.mean.add(&std.mul(&tape.constant(eps))?)
}

/// `½·Σ(μ² + σ² − 1 − logσ²)`, averaged over the batch.
pub fn kl_to_standard_normal<'t>(q: &GaussianPosterior<'t>) -> Result<Var<'t>> {
    check_same("kl", &q.mean, &q.logvar)?;
    let b = batch_of("kl", &q.mean)?;
    let terms = q
        .mean
        .square()?
        .add(&q.logvar.exp()?)?
        .sub(&q.logvar)?
        .add_scalar(-1.0)?;
    terms.sum()?.mul_scalar(0.5 / b)
}

/// Unit-variance Gaussian negative log-likelihood without constants:
/// `½·Σ‖x − x̂‖²` per sample, averaged over the batch.
pub fn gaussian_nll<'t>(x: &Var<'t>, x_hat: &Var<'t>) -> Result<Var<'t>> {
    check_same("gaussian_nll", x, x_hat)?;
    let b = batch_of("gaussian_nll", x)?;
    x.sub(x_hat)?.square()?.sum()?.mul_scalar(0.5 / b)
}

/// Laplacian (`s = p = 1`) negative log-likelihood without the `log 2`
/// normalizer: `Σ|w − ŵ|` per sample, averaged over the batch.
pub fn laplacian_nll<'t>(w: &Var<'t>, w_hat: &Var<'t>) -> Result<Var<'t>> {
    check_same("laplacian_nll", w, w_hat)?;
    let b = batch_of("laplacian_nll", w)?;
    w.sub(w_hat)?.abs()?.sum()?.mul_scalar(1.0 / b)
}

/// Density of the generalized Laplacian `exp(−|y/s|^p) / Z(s, p)` with
/// `Z = 2·s·Γ(1 + 1/p)`, for `p ∈ {1, 2}`.
pub fn generalized_laplacian_density(y: f64, s: f64, p: f64) -> f64 {
    let gamma = if p == 1.0 {
        1.0
    } else if p == 2.0 {
        std::f64::consts::PI.sqrt() / 2.0
    } else {
        f64::NAN
    };
    (-(y / s).abs().powf(p)).exp() / (2.0 * s * gamma)
}

/// Elementwise cross-entropy of targets `x ∈ [0, 1]` against
/// `sigmoid(logits)`, computed stably as `softplus(l) − x·l`; summed per
/// sample, averaged over the batch.
pub fn bernoulli_nll_with_logits<'t>(x: &Var<'t>, logits: &Var<'t>) -> Result<Var<'t>> {
    check_same("cross_entropy", x, logits)?;
    let b = batch_of("cross_entropy", x)?;
    logits.softplus()?.sub(&x.mul(logits)?)?.sum()?.mul_scalar(1.0 / b)
}
