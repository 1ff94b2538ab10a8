//! The assembled network, its training loop, checkpoints and evaluation.

mod checkpoint;
mod config;
mod evaluate;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, FORMAT_VERSION};
pub use config::{
    Ablations, ModelConfig, OptimConfig, Profile, Schedule, Stage, TrainConfig, DESK_ITERATIONS, LEVELS, PAPER_BATCHES, PAPER_ITERATIONS,
    PAPER_PATCHES, SEMANTIC_WIDTHS,
};
pub use evaluate::{enhance, evaluate, score_pair, EvalOptions};
pub use model::{build_model, Architecture, ForwardOutput, ForwardVars, Model, Semantic};
pub use train::{
    adamw_update, checkpoint_name, train, train_step, LossRecord, Objective, TrainData, TrainOptions, TrainState, FINAL_CHECKPOINT, LOG_COLUMNS,
    LOG_FILE,
};
