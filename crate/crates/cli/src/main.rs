use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use wavelet_vae::cli::{
    cmd_eval, cmd_generate, cmd_reconstruct, cmd_synth, cmd_train, cmd_traverse, cmd_wavelet, exit_code, Dims,
    EvalMetric, EvalOptions, RunConfig, WaveletDirection,
};
use wavelet_vae::data::{Recipe, SynthSpec};

#[derive(Parser)]
#[command(name = "wvae", version, about = "Wavelet-space variational autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 is fully deterministic.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a VAE or GAN into an output directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Config override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Resume even when the config hash differs.
        #[arg(long)]
        force: bool,
    },
    /// Sample images from a checkpoint.
    Generate {
        checkpoint: PathBuf,
        #[arg(short, long, default_value_t = 64)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Encode and decode dataset images.
    Reconstruct {
        checkpoint: PathBuf,
        /// Dataset folder or packed file; defaults to the training data.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(short, long, default_value_t = 16)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep latent dimensions around an image's posterior mean.
    Traverse {
        checkpoint: PathBuf,
        /// PGM/PPM image to centre on; a prior sample otherwise.
        #[arg(long)]
        image: Option<PathBuf>,
        /// `all` or a comma-separated list.
        #[arg(long, default_value = "all")]
        dims: String,
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        from: f32,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        to: f32,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compute IQM, FID and index-code mutual information.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "iqm,fid,mi")]
        metrics: Vec<String>,
        /// Re-sampling trials over the same trained model.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Images per set; 0 uses the run's fid_samples.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Haar pyramid of an image, or an image from a pyramid.
    Wavelet {
        input: PathBuf,
        #[arg(short = 'j', long, default_value_t = 3)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = Direction::Forward)]
        direction: Direction,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic corpus.
    Synth {
        /// dc, grating:F[:O], blobs:N, mosaic:N, noise or texture.
        #[arg(long, default_value = "texture")]
        recipe: String,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        extent: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Additive Gaussian noise std.
        #[arg(long, default_value_t = 0.0)]
        noise: f32,
        /// Single tensor file plus manifest instead of an image folder.
        #[arg(long)]
        packed: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Inverse,
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn train_config(common: &Common, overrides: &[String]) -> Result<RunConfig> {
    let mut pairs = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| wavelet_vae::Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let flag_pairs = [
        ("seed", common.seed.map(|s| s.to_string())),
        ("out", common.out.as_ref().map(|p| p.display().to_string())),
        ("threads", common.threads.map(|t| t.to_string())),
    ];
    pairs.extend(flag_pairs.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Ok(RunConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?)
}

fn parse_dims(s: &str) -> Result<Dims> {
    if s == "all" {
        return Ok(Dims::All);
    }
    let list = s
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wavelet_vae::Error::InvalidArgument(format!("bad --dims {s:?}: {e}")))?;
    Ok(Dims::List(list))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, overrides, resume, force } => {
            let cfg = train_config(&common, &overrides)?;
            info!("config hash {}", cfg.hash());
            let ck = cmd_train(&cfg, resume.as_deref(), force)?;
            println!("{}", ck.display());
        }
        Command::Generate { checkpoint, n, common } => {
            report(&cmd_generate(&checkpoint, n, common.seed.unwrap_or(0), &out_dir(&common, "samples"))?);
        }
        Command::Reconstruct { checkpoint, dataset, n, common } => {
            let out = out_dir(&common, "reconstructions");
            report(&cmd_reconstruct(&checkpoint, dataset.as_deref(), n, common.seed.unwrap_or(0), &out)?);
        }
        Command::Traverse { checkpoint, image, dims, from, to, steps, common } => {
            let out = out_dir(&common, "traversal");
            let dims = parse_dims(&dims)?;
            let path = cmd_traverse(
                &checkpoint,
                image.as_deref(),
                &dims,
                (from, to),
                steps,
                common.seed.unwrap_or(0),
                &out,
            )?;
            println!("{}", path.display());
        }
        Command::Eval { checkpoint, dataset, metrics, trials, samples, common } => {
            let metrics = metrics
                .iter()
                .map(|m| m.trim().parse::<EvalMetric>())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let opts = EvalOptions { metrics, trials, samples, seed: common.seed.unwrap_or(0) };
            let reports = cmd_eval(&checkpoint, dataset.as_deref(), &opts, &out_dir(&common, "eval"))?;
            for r in &reports {
                println!("{}", r.to_text());
            }
        }
        Command::Wavelet { input, levels, direction, common } => {
            let direction = match direction {
                Direction::Forward => WaveletDirection::Forward,
                Direction::Inverse => WaveletDirection::Inverse,
            };
            report(&cmd_wavelet(&input, levels, direction, &out_dir(&common, "wavelet"))?);
        }
        Command::Synth { recipe, count, extent, channels, noise, packed, common } => {
            let recipe: Recipe = recipe.parse()?;
            let mut spec = SynthSpec::new(recipe, count, extent, common.seed.unwrap_or(0));
            spec.channels = channels;
            spec.noise = noise;
            let default = if packed { "synth.wgt" } else { "synth" };
            let out = out_dir(&common, default);
            let ds = cmd_synth(&spec, &out, packed)?;
            println!("{} images ({}) -> {}", ds.len(), spec.describe(), Path::new(&out).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<wavelet_vae::Error>().map_or(1, exit_code);
            ExitCode::from(code as u8)
        }
    }
}
