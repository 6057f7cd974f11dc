//! Downstream training, evaluation and ablation grids.

pub mod ablate;
pub mod eval;
pub mod optimizer;
pub mod train;

pub use ablate::{ablate, Grid};
pub use eval::{evaluate, evaluate_clips, EvalReport, ModelPredictor, Predictor, VideoScore};
pub use optimizer::AdamW;
pub use train::{train, train_clips, Init, RunConfig, Schedule, TrainReport};
