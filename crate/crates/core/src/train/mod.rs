//! Optimization recipes and the single-subject, multi-subject, finetuning and
//! leave-one-out transfer workflows.

mod config;
mod loss;
mod optim;
mod trainer;
mod workflows;

pub use config::{LossKind, Mode, StepSchedule, TrainConfig};
pub use loss::{huber, huber_loss, mse_loss, sample_loss, squared};
pub use optim::AdamW;
pub use trainer::{Dataset, EpochRecord, TrainHistory};
pub use workflows::{
    finetune, loo_workflow, multi_split_average, score_subject, train, transfer, FreezeCheck, LooReport,
    TransferOutcome,
};
