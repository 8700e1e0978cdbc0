//! Configuration, checkpoints and the subcommands behind the `wvae` binary.

mod checkpoint;
mod commands;
mod config;
mod render;

pub use checkpoint::{Checkpoint, OptimState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use commands::{
    cmd_eval, cmd_generate, cmd_reconstruct, cmd_synth, cmd_train, cmd_traverse, cmd_wavelet, load_run,
    load_run_dataset, Dims, EvalMetric, EvalOptions, Generator, LoadedRun, WaveletDirection, CHECKPOINT_FILE,
    CONFIG_FILE, GAN_LOG_HEADER, LOCK_FILE, LOSS_LOG, VAE_LOG_HEADER,
};
pub use config::{ArchPreset, RunConfig, RunKind};
pub use render::{grid_cols, tile_grid};

use crate::error::Error;

/// Process exit status for an error: 2 for configuration problems, 3 for
/// numeric aborts, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NumericAbort(_) | Error::NonFinite { .. } => 3,
        _ => 1,
    }
}
