use super::params::{EntryKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.params().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Rebuilds a state saved with [`Adam::moments`].
    pub fn from_parts(config: AdamConfig, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::InvalidArgument("mismatched Adam moment buffers".into()));
        }
        Ok(Self { config, t, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One update at learning rate `lr`. `grads` is aligned with
    /// `store.entries()`; missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f32) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} entries",
                grads.len(),
                store.len()
            )));
        }
        if self.m.len() != store.num_params() {
            return Err(Error::InvalidArgument("optimizer built for another store".into()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let kinds: Vec<EntryKind> = store.entries().iter().map(|e| e.kind).collect();
        let params_with_grads = store
            .params_mut()
            .zip(grads.iter().zip(kinds).filter(|(_, k)| *k == EntryKind::Param).map(|(g, _)| g));
        for ((entry, grad), (m, v)) in params_with_grads.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Some(g) = grad else { continue };
            if g.shape() != entry.value.shape() {
                return Err(Error::shape("adam", format!("gradient for {}", entry.name)));
            }
            let theta = entry.value.data_mut();
            for (((p, &gi), mi), vi) in theta
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi as f64 / bc1;
                let v_hat = *vi as f64 / bc2;
                *p -= (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

/// Step decay: `initial · 0.5^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f32,
    pub period: usize,
}

impl LrSchedule {
    pub fn new(initial: f32, period: usize) -> Result<Self> {
        if !(initial > 0.0 && initial.is_finite()) || period == 0 {
            return Err(Error::Config(format!(
                "learning-rate schedule needs a positive rate and period, got {initial} / {period}"
            )));
        }
        Ok(Self { initial, period })
    }

    pub fn rate(&self, epoch: usize) -> f32 {
        let halvings = (epoch / self.period).min(i32::MAX as usize) as i32;
        (self.initial as f64 * 0.5f64.powi(halvings)) as f32
    }
}

/// Free-function form of [`LrSchedule::rate`].
pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f32 {
    schedule.rate(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Mode;
    use crate::tensor::Tape;

    fn store_with(values: &[f32]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", EntryKind::Param, Tensor::from_vec(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store_with(&[0.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let g = Tensor::ones(&[2]);
        adam.step(&mut s, &[Some(g)], 1e-4).unwrap();
        // m̂ = g, v̂ = g², so Δθ = -α·g/(|g|+ε).
        let w = s.get("w").unwrap().data();
        assert!((w[0] as f64 + 1e-4).abs() < 1e-10, "{}", w[0]);
        assert!((w[1] as f64 + 2.0 + 1e-4).abs() < 1e-6, "{}", w[1]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store_with(&[0.25, 3.0]);
        let before = s.clone();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &[Some(Tensor::zeros(&[2]))], 1e-3).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn step_decreases_squared_norm() {
        let mut s = store_with(&[1.0, -0.5, 2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let f = |s: &ParamStore| s.get("w").unwrap().sq_norm_f64();
        let before = f(&s);
        let tape = Tape::new();
        let bound = s.bind(&tape, Mode::Train);
        let w = bound.var("w").unwrap();
        tape.backward(&w.square().unwrap().sum().unwrap()).unwrap();
        let grads = bound.grads();
        adam.step(&mut s, &grads, 1e-3).unwrap();
        assert!(f(&s) < before);
    }

    #[test]
    fn schedule_halves_per_period() {
        let s = LrSchedule::new(1e-4, 300).unwrap();
        assert_eq!(lr_at(&s, 0), 1e-4);
        assert_eq!(s.rate(299), 1e-4);
        assert!((s.rate(300) - 5e-5).abs() < 1e-12);
        let c = LrSchedule::new(1e-4, 48).unwrap();
        assert!((c.rate(96) - 2.5e-5).abs() < 1e-12);
        assert!(LrSchedule::new(1e-4, 0).is_err());
    }
}
