//! Losses, analytic gradients, Adam, the patch discriminator and the two
//! training stages.

mod adam;
mod backward;
mod discriminator;
mod gradcheck;
mod losses;
mod train;

pub use adam::{adam_step, AdamState, Schedule};
pub use backward::{backward, evaluate, Evaluation, LossParts, Mode, Objective, View};
pub use discriminator::{Discriminator, Forward, DEFAULT_PATCH, LEAKY_SLOPE};
pub use gradcheck::{
    gradcheck, random_case, random_suite, relative_error, CoordinateCheck, GradcheckOptions,
    GradcheckReport, RandomCaseConfig, REL_FLOOR,
};
pub use losses::{
    gs_anchor_loss, hinge_d_loss, hinge_g_loss, mse, offset_drift, rgb_loss, rgb_loss_with,
    total_edit_loss, total_rec_loss, tracking_loss, AnchorWeights, GradientProxy, LossWeights,
    Perceptual, CE_SMOOTHING, FREE_SET_FACTOR,
};
pub use train::{
    fit_editing_stage, fit_modeling_stage, read_log, weight_header, write_log, EditConfig,
    EditOutcome, EditTarget, LogRow, ModelingConfig, ModelingOutcome, TrainView, TrainingSet,
    CHECKPOINT_ADAM, CHECKPOINT_SCENE,
};
