//! Teacher forcing, self-critical policy gradient, mixed and alternating
//! reward objectives, and the half-and-half minibatch mixer.

mod config;
mod mixing;
mod plan;
mod rl;
mod tf;

pub use config::TrainConfig;
pub use mixing::{audit_mixing, MixedBatch, MixingAudit, MixingIterator};
pub use plan::{cycle_kind, BatchPlan, PlanStep};
pub use rl::{
    mean_greedy_reward, mixed_loss, mixed_loss_value, multi_reward_train, rl_loss, rl_step,
    train_rl, RewardMix, RlOutcome, RlReport,
};
pub use tf::{
    mean_nll, prepare_items, teacher_forced_accuracy, train_teacher_forcing, LogRecord, TfItem,
    TfReport,
};
