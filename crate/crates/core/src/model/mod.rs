//! The FAIR-ESI network: spectral, temporal and patch-wise refinement of the
//! scalp fragment, a reconstruction head, and its training loop.

pub mod config;
pub mod network;
pub mod refine;
pub mod train;

pub use config::{FairConfig, SpectralMode};
pub use network::{mse_loss, FairModel, FairParams, ForwardCache, RefinementTrace};
pub use refine::{
    fuse, patch_refine, select_key_patch, spectral_refine, temporal_refine, PatchParams,
};
pub use train::{
    mean_loss, read_log, train, write_log, EpochRecord, PlateauScheduler, TrainConfig,
    TrainOutcome, Trainer, BEST_DIR, LAST_DIR, LOG_FILE,
};
