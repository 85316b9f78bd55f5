//! Optimization shared by teacher and student.

mod adam;
mod gradcheck;
mod loss;
mod schedule;
mod trainer;

pub use adam::Adam;
pub use gradcheck::{loss_gradients, model_grad_check, ModelGradReport, NamedCheck};
pub use loss::{smoothed_ce_graph, smoothed_ce_loss, smoothed_targets};
pub use schedule::LrSchedule;
pub use trainer::{
    batch_loss, corpus_loss, init_student_from_teacher, make_batches, train, EpochRecord, TrainConfig, TrainOutcome,
    TrainState, Trainer,
};

#[cfg(test)]
mod tests;
