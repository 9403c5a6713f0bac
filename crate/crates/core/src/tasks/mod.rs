//! Application heads and training loops built on the autoencoder.

pub mod eval;
pub mod heads;
pub mod schedule;
pub mod train;

pub use heads::{ClassifierHead, SummarizerHead};
pub use schedule::AnnealSchedule;
pub use train::{
    correct, latest_checkpoint, semi_supervised_loss, summarize, train_autoencoder, train_denoiser,
    train_semisupervised, train_summarizer, LogRow, SemiLoss, TrainConfig, TrainLog, CURVES_HEADER,
};
