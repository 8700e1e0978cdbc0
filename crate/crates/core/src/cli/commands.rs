//! Implementations of the `wvae` subcommands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::checkpoint::{Checkpoint, OptimState};
use super::config::{RunConfig, RunKind};
use super::render::{grid_cols, tile_grid};
use crate::data::{load_dataset, pnm_extension, read_pnm, save_folder, save_packed, synth, write_pnm, ImageDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::gan::{generator_forward, GanStepStats, GanTrainer};
use crate::metrics::{extractor_by_name, fid, index_code_mi, iqm, MetricReport, TSV_HEADER};
use crate::models::{clamp_unit, decode_latents, generate, posterior, reconstruct_input, Decoder, EpochStats, Model, VaeTrainer};
use crate::nn::{Adam, AdamConfig, Mode, ParamStore};
use crate::tensor::{Rng, Tape, Tensor};
use crate::wavelet::{decompose, read_pyramid, reconstruct, tile_layout, write_pyramid};

pub const CHECKPOINT_FILE: &str = "checkpoint.wgc";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_LOG: &str = "loss.tsv";
pub const LOCK_FILE: &str = "train.lock";

/// Exclusive marker for a training run; removed on drop.
struct TrainLock(PathBuf);

impl TrainLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidArgument(format!(
                "{} exists; another training run owns this directory",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for TrainLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// The configured dataset: a path, or the synthetic corpus.
pub fn load_run_dataset(cfg: &RunConfig) -> Result<ImageDataset> {
    if cfg.dataset == "synth" {
        synth(&cfg.synth_spec())
    } else {
        load_dataset(&cfg.dataset)
    }
}

fn warn_threads(cfg: &RunConfig) {
    if cfg.threads > 1 {
        warn!("threads = {} requested; computation runs on one thread", cfg.threads);
    }
}

fn adam_state(label: &str, adam: &Adam) -> OptimState {
    let (m, v) = adam.moments();
    OptimState { label: label.into(), t: adam.steps(), m: m.to_vec(), v: v.to_vec() }
}

fn restore_adam(ck: &Checkpoint, label: &str, config: AdamConfig) -> Result<Adam> {
    let o = ck
        .optimizer(label)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer {label:?}")))?;
    Adam::from_parts(config, o.t, o.m.clone(), o.v.clone())
}

fn checkpoint_store(ck: &Checkpoint, label: &str) -> Result<ParamStore> {
    ck.store(label)
        .cloned()
        .ok_or_else(|| Error::Format(format!("checkpoint lacks store {label:?}")))
}

/// Copies values from a checkpoint store into a freshly built one, checking
/// that names, kinds and shapes agree.
fn load_into(fresh: &mut ParamStore, saved: &ParamStore) -> Result<()> {
    if fresh.len() != saved.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} entries, model expects {}",
            saved.len(),
            fresh.len()
        )));
    }
    for (a, b) in fresh.entries().to_vec().iter().zip(saved.entries()) {
        if a.name != b.name || a.kind != b.kind {
            return Err(Error::Format(format!("checkpoint entry {} does not match {}", b.name, a.name)));
        }
        fresh.set(&a.name, b.value.clone())?;
    }
    Ok(())
}

fn check_hash(ck: &Checkpoint, cfg: &RunConfig, force: bool) -> Result<()> {
    let want = cfg.hash();
    if ck.config_hash != want {
        if !force {
            return Err(Error::Config(format!(
                "checkpoint config hash {} differs from the current config {want}; pass --force to continue anyway",
                ck.config_hash
            )));
        }
        warn!("config hash mismatch ignored because of --force");
    }
    Ok(())
}

fn open_log(path: &Path, header: &str, append: bool) -> Result<BufWriter<File>> {
    let fresh = !append || !path.exists();
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)?;
    let mut w = BufWriter::new(f);
    if fresh {
        writeln!(w, "{header}")?;
    }
    Ok(w)
}

pub const VAE_LOG_HEADER: &str = "epoch\tlr\ttotal\tll_recon\tdetail_recon\tkl";
pub const GAN_LOG_HEADER: &str = "step\td_loss\tg_loss\td_real\td_fake\tmax_critic_weight";

fn vae_log_line(s: &EpochStats) -> String {
    format!(
        "{}\t{:e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        s.epoch, s.lr, s.values.total, s.values.ll_recon, s.values.detail_recon, s.values.kl
    )
}

fn gan_log_line(step: u64, s: &GanStepStats) -> String {
    format!(
        "{step}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        s.d_loss, s.g_loss, s.d_real, s.d_fake, s.max_critic_weight
    )
}

/// Trains the configured model into `cfg.out`: config echo, loss log,
/// checkpoints every `checkpoint_every` epochs (steps for GANs) and at the
/// end. Returns the checkpoint path.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    warn_threads(cfg);
    let ds = load_run_dataset(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let _lock = TrainLock::acquire(&cfg.out)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_text())?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    if let Some(ck) = &resume {
        check_hash(ck, cfg, force)?;
        if ck.image != ds.item_shape() {
            return Err(Error::Config(format!(
                "checkpoint images are {:?}, dataset items are {:?}",
                ck.image,
                ds.item_shape()
            )));
        }
    }
    match cfg.model {
        RunKind::Vae(kind) => train_vae(cfg, kind, &ds, resume.as_ref()),
        RunKind::Gan(_) => train_gan(cfg, &ds, resume.as_ref()),
    }
}

fn vae_checkpoint(cfg: &RunConfig, tr: &VaeTrainer, image: [usize; 3]) -> Checkpoint {
    Checkpoint {
        config: cfg.to_text(),
        config_hash: cfg.hash(),
        image,
        progress: tr.epoch as u64,
        rng: tr.rng.state(),
        stores: vec![("model".into(), tr.store.clone())],
        optimizers: vec![adam_state("model", &tr.adam)],
    }
}

fn train_vae(cfg: &RunConfig, kind: crate::models::ModelKind, ds: &ImageDataset, resume: Option<&Checkpoint>) -> Result<PathBuf> {
    let [c, h, _] = ds.item_shape();
    let model = Model::new(kind, cfg.arch_for(c, h))?;
    let mut tr = VaeTrainer::new(model, cfg.train_config(), cfg.seed)?;
    if let Some(ck) = resume {
        load_into(&mut tr.store, &checkpoint_store(ck, "model")?)?;
        tr.adam = restore_adam(ck, "model", tr.adam.config)?;
        tr.rng = Rng::from_state(ck.rng);
        tr.epoch = ck.progress as usize;
        info!("resuming {} at epoch {}", cfg.model, tr.epoch);
    }
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    if resume.is_none() {
        vae_checkpoint(cfg, &tr, ds.item_shape()).save(&ck_path)?;
    }
    let mut log = open_log(&cfg.out.join(LOSS_LOG), VAE_LOG_HEADER, resume.is_some())?;
    let image = ds.item_shape();
    tr.train(ds, |tr, stats| {
        writeln!(log, "{}", vae_log_line(stats))?;
        log.flush()?;
        info!(
            "epoch {} lr {:.2e} loss {:.4} (ll {:.4}, detail {:.4}, kl {:.4})",
            stats.epoch, stats.lr, stats.values.total, stats.values.ll_recon, stats.values.detail_recon, stats.values.kl
        );
        if stats.epoch % cfg.checkpoint_every == 0 || stats.epoch == cfg.epochs {
            vae_checkpoint(cfg, tr, image).save(&ck_path)?;
        }
        Ok(())
    })?;
    Ok(ck_path)
}

fn gan_checkpoint(cfg: &RunConfig, tr: &GanTrainer, image: [usize; 3]) -> Checkpoint {
    Checkpoint {
        config: cfg.to_text(),
        config_hash: cfg.hash(),
        image,
        progress: tr.steps,
        rng: tr.rng.state(),
        stores: vec![("generator".into(), tr.g_store.clone()), ("discriminator".into(), tr.d_store.clone())],
        optimizers: vec![adam_state("generator", &tr.g_adam), adam_state("discriminator", &tr.d_adam)],
    }
}

fn train_gan(cfg: &RunConfig, ds: &ImageDataset, resume: Option<&Checkpoint>) -> Result<PathBuf> {
    let [c, h, _] = ds.item_shape();
    let mut tr = GanTrainer::new(cfg.arch_for(c, h), cfg.gan_config(), cfg.seed)?;
    if let Some(ck) = resume {
        load_into(&mut tr.g_store, &checkpoint_store(ck, "generator")?)?;
        load_into(&mut tr.d_store, &checkpoint_store(ck, "discriminator")?)?;
        tr.g_adam = restore_adam(ck, "generator", tr.g_adam.config)?;
        tr.d_adam = restore_adam(ck, "discriminator", tr.d_adam.config)?;
        tr.rng = Rng::from_state(ck.rng);
        tr.steps = ck.progress;
    }
    let image = ds.item_shape();
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    if resume.is_none() {
        gan_checkpoint(cfg, &tr, image).save(&ck_path)?;
    }
    let samples_dir = cfg.out.join("samples");
    fs::create_dir_all(&samples_dir)?;
    let mut log = open_log(&cfg.out.join(LOSS_LOG), GAN_LOG_HEADER, resume.is_some())?;
    let mut fid_log = open_log(&cfg.out.join("fid.tsv"), "step\tfid", resume.is_some())?;
    let extractor = extractor_by_name(&cfg.extractor, cfg.extractor_seed)?;
    let real = ds.take(cfg.fid_samples)?.into_images();
    let remaining = cfg.gan_steps.saturating_sub(tr.steps);
    let ext = pnm_extension(c);
    tr.train(ds, remaining, |tr, step, stats| {
        writeln!(log, "{}", gan_log_line(step, stats))?;
        if step % cfg.sample_every == 0 || step == cfg.gan_steps {
            log.flush()?;
            // A dedicated stream keeps sampling from perturbing training.
            let mut rng = Rng::new(cfg.seed ^ step);
            let samples = clamp_unit(&tr.sample(&mut rng, real.shape()[0])?);
            let grid_n = samples.shape()[0].min(64);
            let grid = tile_grid(&samples.slice_outer(0, grid_n)?, grid_cols(grid_n))?;
            write_pnm(samples_dir.join(format!("step_{step:06}.{ext}")), &grid)?;
            let value = fid(&real, &samples, extractor.as_ref())?.value;
            writeln!(fid_log, "{step}\t{value:.6}")?;
            fid_log.flush()?;
            info!("step {step} d_loss {:.4} g_loss {:.4} fid {value:.4}", stats.d_loss, stats.g_loss);
        }
        if step % cfg.checkpoint_every as u64 == 0 || step == cfg.gan_steps {
            gan_checkpoint(cfg, tr, image).save(&ck_path)?;
        }
        Ok(())
    })?;
    log.flush()?;
    Ok(ck_path)
}

/// Decoder side of a trained run.
pub enum Generator {
    Vae { model: Model, store: ParamStore },
    Gan { gen: Decoder, latent_dim: usize, store: ParamStore },
}

impl Generator {
    pub fn latent_dim(&self) -> usize {
        match self {
            Generator::Vae { model, .. } => model.arch.latent_dim,
            Generator::Gan { latent_dim, .. } => *latent_dim,
        }
    }

    /// Images for explicit latent codes `[n, d]`, before clamping.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            Generator::Vae { model, store } => decode_latents(model, store, z),
            Generator::Gan { gen, store, .. } => {
                let tape = Tape::new();
                let bound = store.bind(&tape, Mode::Eval);
                Ok((*generator_forward(gen, &bound, tape.constant(z.clone()))?.value()).clone())
            }
        }
    }

    pub fn generate(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        match self {
            Generator::Vae { model, store } => generate(model, store, rng, n),
            Generator::Gan { .. } => self.decode(&rng.sample_normal(&[n, self.latent_dim()])),
        }
    }

    /// The encoder-decoder pair, for commands that need an encoder.
    pub fn vae(&self) -> Result<(&Model, &ParamStore)> {
        match self {
            Generator::Vae { model, store } => Ok((model, store)),
            Generator::Gan { .. } => Err(Error::InvalidArgument("GAN checkpoints have no encoder".into())),
        }
    }
}

/// A checkpoint with its configuration and rebuilt networks.
pub struct LoadedRun {
    pub config: RunConfig,
    pub checkpoint: Checkpoint,
    pub generator: Generator,
}

pub fn load_run(path: impl AsRef<Path>) -> Result<LoadedRun> {
    let checkpoint = Checkpoint::load(path)?;
    let config = RunConfig::from_text(&checkpoint.config)?;
    let [c, h, _] = checkpoint.image;
    let arch = config.arch_for(c, h);
    let generator = match config.model {
        RunKind::Vae(kind) => {
            let model = Model::new(kind, arch)?;
            let mut store = model.init(&mut Rng::new(0))?;
            load_into(&mut store, &checkpoint_store(&checkpoint, "model")?)?;
            Generator::Vae { model, store }
        }
        RunKind::Gan(_) => {
            let gen = Decoder::new(&arch, 1)?;
            let mut store = ParamStore::new();
            gen.init(&mut store, &mut Rng::new(0))?;
            load_into(&mut store, &checkpoint_store(&checkpoint, "generator")?)?;
            Generator::Gan { gen, latent_dim: arch.latent_dim, store }
        }
    };
    Ok(LoadedRun { config, checkpoint, generator })
}

fn write_images(images: &Tensor, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let ds = ImageDataset::new(clamp_unit(images), "export")?;
    save_folder(&ds, dir, prefix)
}

/// `n` prior samples as image files plus `grid.pgm|ppm`.
pub fn cmd_generate(checkpoint: &Path, n: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let run = load_run(checkpoint)?;
    let images = clamp_unit(&run.generator.generate(&mut Rng::new(seed), n)?);
    let mut paths = write_images(&images, out, "sample_")?;
    let grid_path = out.join(format!("grid.{}", pnm_extension(images.shape()[1])));
    write_pnm(&grid_path, &tile_grid(&images, grid_cols(n))?)?;
    paths.push(grid_path);
    Ok(paths)
}

/// Originals and reconstructions of the first `n` items, plus a grid with
/// alternating rows of originals and reconstructions.
pub fn cmd_reconstruct(checkpoint: &Path, dataset: Option<&str>, n: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let run = load_run(checkpoint)?;
    let (model, store) = run.generator.vae()?;
    let ds = match dataset {
        Some(p) => load_dataset(p)?,
        None => load_run_dataset(&run.config)?,
    };
    let x = ds.take(n.max(1))?.into_images();
    let recon = clamp_unit(&reconstruct_input(model, store, &x, &mut Rng::new(seed))?);
    let mut paths = write_images(&x, out, "original_")?;
    paths.extend(write_images(&recon, out, "recon_")?);
    let cols = grid_cols(x.shape()[0]);
    let mut rows = Vec::new();
    for start in (0..x.shape()[0]).step_by(cols) {
        let len = cols.min(x.shape()[0] - start);
        rows.push(x.slice_outer(start, len)?);
        rows.push(recon.slice_outer(start, len)?);
    }
    let pairs = pad_rows(&rows, cols)?;
    let grid_path = out.join(format!("grid.{}", pnm_extension(x.shape()[1])));
    write_pnm(&grid_path, &tile_grid(&pairs, cols)?)?;
    paths.push(grid_path);
    Ok(paths)
}

/// Concatenates row batches, padding short rows with black tiles.
fn pad_rows(rows: &[Tensor], cols: usize) -> Result<Tensor> {
    let padded = rows
        .iter()
        .map(|r| {
            let n = r.shape()[0];
            if n == cols {
                Ok(r.clone())
            } else {
                let mut shape = r.shape().to_vec();
                shape[0] = cols - n;
                Tensor::cat_outer(&[r.clone(), Tensor::zeros(&shape)])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::cat_outer(&padded)
}

/// Latent dimensions to sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum Dims {
    All,
    List(Vec<usize>),
}

/// One grid row per swept dimension, `steps` columns over `range`, around
/// the posterior mean of `image` or, without an image, a prior sample.
pub fn cmd_traverse(
    checkpoint: &Path,
    image: Option<&Path>,
    dims: &Dims,
    range: (f32, f32),
    steps: usize,
    seed: u64,
    out: &Path,
) -> Result<PathBuf> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let run = load_run(checkpoint)?;
    let d = run.generator.latent_dim();
    let base: Vec<f32> = match image {
        Some(p) => {
            let (model, store) = run.generator.vae()?;
            let img = read_pnm(p)?;
            let x = img.reshape(&[1, img.shape()[0], img.shape()[1], img.shape()[2]])?;
            posterior(model, store, &x)?.0.into_data()
        }
        None => {
            warn!("no image given; traversing around a prior sample");
            Rng::new(seed).sample_normal(&[d]).into_data()
        }
    };
    let dims: Vec<usize> = match dims {
        Dims::All => (0..d).collect(),
        Dims::List(v) => v.clone(),
    };
    if let Some(bad) = dims.iter().find(|&&k| k >= d) {
        return Err(Error::InvalidArgument(format!("dimension {bad} outside latent size {d}")));
    }
    let z = Tensor::from_fn(&[dims.len() * steps, d], |i| {
        let (row, k) = (i / d, i % d);
        let (dim, s) = (dims[row / steps], row % steps);
        if k == dim {
            let t = if steps == 1 { 0.0 } else { s as f32 / (steps - 1) as f32 };
            range.0 + t * (range.1 - range.0)
        } else {
            base[k]
        }
    });
    let images = clamp_unit(&run.generator.decode(&z)?);
    fs::create_dir_all(out)?;
    let path = out.join(format!("traverse.{}", pnm_extension(images.shape()[1])));
    write_pnm(&path, &tile_grid(&images, steps)?)?;
    Ok(path)
}

/// Metrics understood by [`cmd_eval`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMetric {
    Iqm,
    Fid,
    Mi,
}

impl std::str::FromStr for EvalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iqm" => Ok(EvalMetric::Iqm),
            "fid" => Ok(EvalMetric::Fid),
            "mi" => Ok(EvalMetric::Mi),
            _ => Err(Error::Config(format!("unknown metric {s:?}; expected iqm, fid or mi"))),
        }
    }
}

/// Evaluation settings.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub metrics: Vec<EvalMetric>,
    /// Independent re-sampling trials; the model is not retrained.
    pub trials: usize,
    /// Images per set; 0 uses the config's `fid_samples`.
    pub samples: usize,
    pub seed: u64,
}

/// Computes the requested metrics over generated and reconstructed sets,
/// writing `eval.tsv` and `eval.txt` into `out`.
pub fn cmd_eval(checkpoint: &Path, dataset: Option<&str>, opts: &EvalOptions, out: &Path) -> Result<Vec<MetricReport>> {
    if opts.trials == 0 || opts.metrics.is_empty() {
        return Err(Error::InvalidArgument("eval needs at least one metric and one trial".into()));
    }
    let run = load_run(checkpoint)?;
    let cfg = &run.config;
    let ds = match dataset {
        Some(p) => load_dataset(p)?,
        None => load_run_dataset(cfg)?,
    };
    let n = if opts.samples == 0 { cfg.fid_samples } else { opts.samples }.min(ds.len());
    if n < 2 {
        return Err(Error::InvalidArgument("evaluation needs at least two images".into()));
    }
    let real = ds.take(n)?.into_images();
    let vae = run.generator.vae().ok();
    let extractor = extractor_by_name(&cfg.extractor, cfg.extractor_seed)?;
    let mut series: Vec<(String, Vec<f64>, usize, usize, bool)> = Vec::new();
    let mut push = |name: &str, v: f64, n_real: usize, n_gen: usize, uses_extractor: bool| {
        match series.iter_mut().find(|s| s.0 == name) {
            Some(s) => s.1.push(v),
            None => series.push((name.to_string(), vec![v], n_real, n_gen, uses_extractor)),
        }
    };
    let mut master = Rng::new(opts.seed);
    for _ in 0..opts.trials {
        let mut rng = master.fork();
        let generated = clamp_unit(&run.generator.generate(&mut rng, n)?);
        let recon = match vae {
            Some((model, store)) => Some(clamp_unit(&reconstruct_input(model, store, &real, &mut rng)?)),
            None => None,
        };
        for metric in &opts.metrics {
            match metric {
                EvalMetric::Iqm => {
                    push("iqm_data", iqm(&real, cfg.iqm_divisor)?, n, 0, false);
                    push("iqm_generated", iqm(&generated, cfg.iqm_divisor)?, 0, n, false);
                    if let Some(r) = &recon {
                        push("iqm_reconstructed", iqm(r, cfg.iqm_divisor)?, 0, n, false);
                    }
                }
                EvalMetric::Fid => {
                    push("fid_generated", fid(&real, &generated, extractor.as_ref())?.value, n, n, true);
                    if let Some(r) = &recon {
                        push("fid_reconstructed", fid(&real, r, extractor.as_ref())?.value, n, n, true);
                    }
                }
                EvalMetric::Mi => match vae {
                    Some((model, store)) => {
                        let v = index_code_mi(model, store, ds.images(), &mut rng, 100, None)?;
                        push("mi", v, ds.len(), 0, false);
                    }
                    None => warn!("mi skipped: GAN checkpoints have no encoder"),
                },
            }
        }
    }
    let reports = series
        .into_iter()
        .map(|(name, values, n_real, n_gen, uses_extractor)| {
            let r = if opts.trials > 1 {
                MetricReport::from_trials(name, &values, n_real, n_gen)?
            } else {
                MetricReport::new(name, values[0], n_real, n_gen)
            };
            let r = r.with_config_hash(run.checkpoint.config_hash.clone());
            let r = if uses_extractor { r.with_extractor(extractor.id()) } else { r };
            r.check()?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut tsv = format!("{TSV_HEADER}\n");
    let mut text = String::new();
    for r in &reports {
        tsv.push_str(&r.to_tsv());
        tsv.push('\n');
        text.push_str(&r.to_text());
        text.push('\n');
    }
    fs::write(out.join("eval.tsv"), tsv)?;
    fs::write(out.join("eval.txt"), text)?;
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveletDirection {
    Forward,
    Inverse,
}

/// Forward: decomposes a PGM/PPM image, writing the coefficient pyramid to
/// `out/coeffs` and the tiled rendering to `out/layout.*`. Inverse: reads a
/// pyramid directory and writes `out/reconstruction.*`.
pub fn cmd_wavelet(input: &Path, depth: usize, direction: WaveletDirection, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    match direction {
        WaveletDirection::Forward => {
            let img = read_pnm(input)?;
            let [c, h, w]: [usize; 3] = img.shape().try_into().expect("pnm is rank 3");
            let p = decompose(&img.into_reshaped(&[1, c, h, w])?, depth)?;
            let coeffs = out.join("coeffs");
            write_pyramid(&coeffs, &p)?;
            let mut paths = vec![coeffs];
            if depth > 0 {
                let (canvas, tiles) = tile_layout(&p)?;
                info!("layout has {} tiles", tiles.len());
                let layout = out.join(format!("layout.{}", pnm_extension(c)));
                write_pnm(&layout, &canvas.reshape(&canvas.shape()[1..])?)?;
                paths.push(layout);
            }
            Ok(paths)
        }
        WaveletDirection::Inverse => {
            let x = reconstruct(&read_pyramid(input)?)?;
            let path = out.join(format!("reconstruction.{}", pnm_extension(x.shape()[1])));
            write_pnm(&path, &clamp_unit(&x.slice_outer(0, 1)?.reshape(&x.shape()[1..])?))?;
            Ok(vec![path])
        }
    }
}

/// Writes a synthetic corpus as a PGM/PPM folder or, with `packed`, a
/// tensor file plus manifest.
pub fn cmd_synth(spec: &SynthSpec, out: &Path, packed: bool) -> Result<ImageDataset> {
    let ds = synth(spec)?;
    if packed {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        save_packed(&ds, out)?;
    } else {
        save_folder(&ds, out, "img")?;
    }
    Ok(ds)
}
