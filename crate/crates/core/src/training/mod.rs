//! Losses, regularizers, optimizer, toy data, training loops and the invertibility attack.

pub mod adam;
pub mod attack;
pub mod data;
pub mod fd;
pub mod loss;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attack::{invertibility_attack, pgd_sign, recon_objective, AttackConfig, AttackResult};
pub use data::{checkerboard_on, dataset_checkerboard, dataset_regression2d, RegressionData, CHECKERBOARD_HALF_WIDTH};
pub use fd::{fd_batch, fd_forward_term, fd_penalty, fd_penalty_with_grad, FdRegConfig, FdTerms};
pub use loss::{mean_loss, nf_loss, MeanLoss, NfLoss, RegressionLoss};
pub use train::{train, AngleConfig, DensitySource, MetricRow, Task, TrainConfig, TrainLog, METRIC_HEADER};
