//! Optimizer, learning-rate schedule, training loop and hyperparameter search.

mod optim;
mod trainer;
mod tune;

pub use optim::{
    adamw_update, clip_grad_norm, cosine_warm_restart_lr, grad_norm, AdamW, AdamWConfig,
};
pub use trainer::{
    evaluate_model, predict_split, EpochRecord, History, StopReason, TrainConfig, Trainer,
};
pub use tune::{
    trials_table, tune, AshaConfig, SearchSpace, TrialResult, TrialStatus, SEARCHED_KEYS,
};
