//! Meta-training, knowledge-inheritance adaptation and the ablation paths.

mod checkpoint;
mod config;
mod inherit;
mod model;
mod train;
mod verify;

pub use checkpoint::{ModelCheckpoint, ModelKind, Provenance, CHECKPOINT_VERSION};
pub use config::{KiReduction, TrainConfig};
pub use inherit::{
    adapt_with_inheritance, fine_tune, ki_loss, ki_loss_grad, ki_on_tape, soft_labels, softmax_rows, total_loss,
    total_loss_grad, AdaptOptions, AdaptOutcome, AdaptStep, SoftLabelGrid,
};
pub use model::{
    Backbone, Dataset, Input, Instance, ModelConfig, Sealed, Tagger, EMISSION_BIAS, EMISSION_WEIGHT, END, START,
    TRANSITIONS,
};
pub use train::{
    inner_adapt, meta_gradient, meta_outer_step, meta_train, task_loss, task_loss_grad, train_scratch_baseline,
    Snapshot, TaskSets, TrainOutcome, SECOND_ORDER_MAX_PARAMS,
};
pub use verify::{gradient_suite, tiny_model, GradCheckRow, GradSuite};
