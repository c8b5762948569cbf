//! Training loop, checkpoints and the tokenization pipeline.

mod checkpoint;
mod config;
mod pipeline;
mod state;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::TrainingConfig;
pub use pipeline::{
    kmeans_state, tokenize, tokenize_sequence, train, train_kmeans, train_kmeans_manifest,
    CHECKPOINT_FILE, LOSS_LOG_FILE,
};
pub use state::{format_loss_line, Trainer, TrainerState};
