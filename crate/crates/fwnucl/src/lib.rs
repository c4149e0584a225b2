//! Structured adversarial perturbation search: conditional-gradient
//! (Frank-Wolfe) attacks over nuclear, Schatten, group-nuclear, and lp
//! distortion sets, with FGSM/PGD baselines, desk-scale differentiable
//! classifiers, and a metrics harness.
//!
//! The constraint set is only ever touched through its linear
//! minimization oracle, so every iterate of the attack is a convex
//! combination of extreme points: rank-one matrices for nuclear-type
//! balls, which is where the structured (low-rank, localized) look of the
//! resulting perturbations comes from.

pub mod attack;
pub mod ball;
pub mod data;
pub mod error;
pub mod fw;
pub mod harness;
pub mod imageio;
pub mod linalg;
pub mod model;
pub mod tensor;

pub use attack::{
    clamp_box, fgsm, fw_attack, pgd, pgd_nucl, run_attack, AttackConfig, AttackKind, AttackResult,
    LossMode,
};
pub use ball::{
    dual_norm_value, group_norm_general, lmo, norm_value, project, sample_in_ball, DistortionBall,
    GroupSelection, LmoVertex, LpNorm,
};
pub use data::{load_csv_dataset, load_idx, parse_group_spec, synth_dataset, Dataset};
pub use error::{Error, Result};
pub use fw::{frank_wolfe, frank_wolfe_block, fw_gap, short_step, FwTrajectory, StepRule};
pub use linalg::{full_svd, project_l1_ball, top_singular_triplet, Mat, SvdTriplet};
pub use model::{
    adversarial_objective, cross_entropy_and_grad, finite_diff_check, load_model, predict,
    save_model, train_sgd, GradientModel, LossSpec, Model,
};
pub use tensor::{GroupPartition, ImageTensor, Matricization, PixelGroup};
