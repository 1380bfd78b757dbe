//! Optimization: Adam, the learning-rate schedule, checkpoints, and the
//! training session that ties them to the model and data pipeline.

pub mod adam;
pub mod checkpoint;
pub mod schedule;
pub mod trainer;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use schedule::Schedule;
pub use trainer::{
    format_log_line, infer_padded, load_model, model_config_from_checkpoint, EvalMetrics,
    EvalRecord, TrainConfig, TrainSession,
};
