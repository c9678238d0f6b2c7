//! Losses, optimizer, and the training loop.

pub mod losses;
pub mod optimizer;
pub mod trainer;

pub use losses::{
    classification_loss, goal_loss, regression_loss, scene_loss, select_best_mode, total_loss, LossConfig,
    LossParts, LossValues,
};
pub use optimizer::{Adam, StepSchedule};
pub use trainer::{evaluate_losses, model_gradient_check, scene_gradients, train_epoch, EpochReport, TrainConfig, Trainer};
