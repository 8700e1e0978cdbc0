use super::{ElboValues, LossConfig, Model};
use crate::data::{batches, ImageDataset};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, LrSchedule, Mode, ParamStore};
use crate::tensor::{Rng, Tape, Tensor};

/// Optimization settings of a VAE run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Epochs between learning-rate halvings.
    pub halve_every: usize,
    pub loss: LossConfig,
    pub shuffle: bool,
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 100,
            lr: 1e-4,
            halve_every: 300,
            loss: LossConfig::default(),
            shuffle: true,
            flip: false,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr, self.halve_every)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.loss.beta >= 0.0 && self.loss.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and ≥ 0", self.loss.beta)));
        }
        Ok(())
    }
}

/// Mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f32,
    pub batches: usize,
    pub values: ElboValues,
}

/// Model, parameters, optimizer state and the data stream of one run.
pub struct VaeTrainer {
    pub model: Model,
    pub store: ParamStore,
    pub adam: Adam,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericAbort(format!("{what} is {v}")))
    }
}

impl VaeTrainer {
    /// Fresh parameters drawn from `seed`; the same stream then drives
    /// shuffling and sampling.
    pub fn new(model: Model, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let store = model.init(&mut rng)?;
        let adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &store);
        Ok(Self { model, store, adam, rng, epoch: 0, config })
    }

    pub fn current_lr(&self) -> Result<f32> {
        Ok(self.config.schedule()?.rate(self.epoch))
    }

    /// One Adam step on `x`. Parameters are left untouched when the loss
    /// or any gradient is non-finite.
    pub fn step(&mut self, x: &Tensor, lr: f32) -> Result<ElboValues> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape, Mode::Train);
        let elbo = self.model.loss(&bound, x, &mut self.rng, &self.config.loss)?;
        let values = elbo.values();
        check_finite("loss", values.total)?;
        tape.backward(&elbo.total)?;
        let grads = bound.grads();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NumericAbort("non-finite gradient".into()));
        }
        let updates = bound.into_updates();
        self.adam.step(&mut self.store, &grads, lr)?;
        self.store.apply_updates(updates)?;
        Ok(values)
    }

    /// One pass over `ds` with drop-last batching.
    pub fn run_epoch(&mut self, ds: &ImageDataset) -> Result<EpochStats> {
        let lr = self.current_lr()?;
        let epoch = self.epoch + 1;
        let mut it_rng = self.rng.fork();
        let mut sum = ElboValues::default();
        let mut n = 0usize;
        for batch in batches(ds, self.config.batch_size, &mut it_rng, self.config.shuffle, self.config.flip)? {
            let v = self
                .step(&batch?, lr)
                .map_err(|e| match e {
                    Error::NumericAbort(m) => Error::NumericAbort(format!("epoch {epoch}, batch {}: {m}", n + 1)),
                    other => other,
                })?;
            sum.total += v.total;
            sum.ll_recon += v.ll_recon;
            sum.detail_recon += v.detail_recon;
            sum.kl += v.kl;
            n += 1;
        }
        let k = n as f64;
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            lr,
            batches: n,
            values: ElboValues {
                total: sum.total / k,
                ll_recon: sum.ll_recon / k,
                detail_recon: sum.detail_recon / k,
                kl: sum.kl / k,
            },
        })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn train(
        &mut self,
        ds: &ImageDataset,
        mut on_epoch: impl FnMut(&Self, &EpochStats) -> Result<()>,
    ) -> Result<Vec<EpochStats>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(ds)?;
            on_epoch(self, &stats)?;
            log.push(stats);
        }
        Ok(log)
    }
}
