//! Training objective and optimizer.

mod loss;
mod schedule;
mod sgd;

pub use loss::{
    combined_loss, dice_loss, one_hot, soft_cross_entropy, LossConfig, LossParts,
    DEFAULT_DICE_EPS, DEFAULT_LOG_FLOOR,
};
pub use schedule::{cosine_lr, restart_steps, WarmRestarts};
pub use sgd::{SgdConfig, SgdState};
