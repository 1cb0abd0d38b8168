//! Optimization, checkpoints, configuration and the train/eval/restore loops.

mod checkpoint;
mod config;
mod optim;
mod trainer;

pub use checkpoint::{config_hash, decode_checkpoint, encode_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use config::{model_from_canonical, set_model_key, TrainConfig, ENV_SEED, ENV_THREADS};
pub use optim::{adamw_step, cosine_anneal_lr, AdamWConfig, OptimState};
pub use trainer::{
    ablate, ablation_configs, ablation_table, evaluate, evaluate_split, load_model, loss_log_text, pad_replicate,
    restore_image, restore_single, stack, train, train_on, with_threads, AblationRow, Evaluation, LossRecord,
    TrainOutcome, FINAL_CHECKPOINT, LOSS_LOG_FILE, LOSS_LOG_HEADER,
};
