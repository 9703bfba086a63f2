//! Supervision windows, the bidirectional loss with its gradient, the
//! optimisation loop and checkpoint persistence.

mod checkpoint;
mod loss;
mod train;
mod windows;

pub use checkpoint::{checkpoint_precision, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{prepare_sample, sample_loss, BackwardMode, LossMode, LossOptions, LossValue, PreparedSample};
pub use train::{train, validation_loss, LogRecord, TrainConfig, TrainOutcome};
pub use windows::{make_windows, materialize, sample_refs, SampleRef, WindowSample};
