//! The (C+1)-way classifier: encoder `f`, head `h`, projection `g`, trained on
//! cross-entropy plus a supervised contrastive term with hand-derived gradients.

mod backward;
mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod optim;
mod train;

pub use backward::{backward, objective, AffineGrad, Batch, Gradients, LossBreakdown};
pub use gradcheck::{check_gradients, kink_margin, GradCheck, Term};
pub use checkpoint::{layout_path, load_checkpoint, save_checkpoint, CheckpointLayout, TensorEntry};
pub use loss::{cross_entropy, log_sum_exp, supcon_loss};
pub use model::{
    Affine, Architecture, BatchNorm, BatchStats, Cache, Forward, Mode, ModelParams, ParamInfo, ParamKind, Part,
    BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, PROJECTION_DIM,
};
pub use optim::{momentum_update, sgd_step, OptimizerSchedule, SgdState};
pub use train::{train, EpochLog, TrainConfig, TrainLog, TrainingSet};
