//! Losses, exact gradients, the hybrid sparse/dense Adam optimizer and the
//! training loop.

pub mod adam;
pub mod backward;
pub mod loss;
pub mod train;

pub use adam::{AdamConfig, RowMoments, TrainState};
pub use backward::{backward, Batch, BatchOutput, Gradients};
pub use loss::{ft_loss, kd_loss, one_hot, LossMode};
pub use train::{evaluate, metrics_csv, train, EvalResult, MetricRow, TrainConfig, TrainOutcome};
