//! Initialization, losses, metrics, optimization, generation and the
//! training loop.

mod adam;
mod checkpoint;
mod generate;
pub mod init;
mod losses;
mod metrics;
mod network;
mod rng;
mod trainer;

pub use adam::{Adam, AdamConfig, LrSchedule};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use generate::{conditional_generate, free_run, split_point, teacher_forced, Generated};
pub use init::{xavier_bound, xavier_uniform};
pub use losses::{bce_multilabel_loss, ce_loss};
pub use metrics::{accuracy, argmax, average_precision_score};
pub use network::{ClassificationHead, HeadKind, LossKind, Network, Prediction, Task, TaskSpec};
pub use rng::{stream_rng, Stream};
pub use trainer::{evaluate, format_log, train, EpochRecord, Evaluation, TrainConfig, METRICS_HEADER};
