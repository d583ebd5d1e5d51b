//! Teacher–student distillation on synthetic identity data.

mod ablation;
mod dataset;
mod student;
mod train;

pub use ablation::{run_ablation, summarize, AblationRow, AblationSummary, Variant};
pub use dataset::{
    compute_centroids, generate_dataset, split_sizes, teacher_embed, training_centroids,
    DatasetConfig, Sample, SyntheticIdentityDataset, Teacher, DEFAULT_TEACHER_LOGIT_SCALE,
    MAX_ANCHOR_COSINE,
};
pub use student::{student_backprop, Forward, Params64, StudentModel, StudentShape};
pub use train::{
    evaluate, learning_rate, prepare, train, train_prepared, EpochReport, EvalSummary,
    InstanceMode, Prepared, TeacherSource, TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::eval::EvalError;
use crate::losses::LossError;
use crate::math::MathError;
use crate::occlusion::OcclusionError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("identity {0} has no training sample")]
    EmptyIdentity(u32),
    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: &'static str,
        history: Vec<EpochReport>,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Occlusion(#[from] OcclusionError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
