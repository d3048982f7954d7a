//! Fit an articulated multi-block skeleton inside a parametric body surface.
//!
//! The crate is organized around a small pipeline:
//!
//! 1. [`body`] — a capsule-sampled surface model posed by a per-part rigid
//!    kinematic tree; produces 3D joints and the landmark targets the
//!    skeleton is fitted to.
//! 2. [`skeleton`] — rigid bone blocks with seam match points and a global
//!    shape space; forward posing and landmark evaluation.
//! 3. [`energy`] — the fitting objective: landmark, cross-block distance,
//!    seam and clavicle terms plus reprojection and supervision losses, all
//!    with exact analytic gradients.
//! 4. [`optim`] — a deterministic Adam descent, the body fit, and the
//!    skeleton fit in its three regimes (`osf`, `osfplus`, `plus`).
//! 5. [`synth`] / [`metrics`] — seeded scene generation with ground truth,
//!    and the evaluation metrics used to compare regimes.
//!
//! Everything is `f64`, deterministic for a fixed seed, and serializable.

pub mod body;
pub mod energy;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod skeleton;
pub mod synth;
#[cfg(test)]
pub(crate) mod testutil;

pub use body::{body_forward, body_joints, body_landmarks, kp_map, BodyFk, BodyModel, BodyState};
pub use energy::{
    build_constraints, e_clv, e_ct, e_j, e_landmark, e_osf, e_reproj, loss_skel_supervision,
    loss_theta, BodyGrad, ConstraintSet, CtPair, EnergySpec, Keypoint, SkelGrad,
};
pub use error::{Error, Result};
pub use geom::{
    project, project_jacobian, AxisAngle, Camera, Chart, Quat, RigidTransform, Rotation,
};
pub use metrics::{d_mean, mpjpe, pve, reconstruction_error};
pub use optim::{
    compare_rotation_charts, fit_body, fit_skeleton, fit_skeleton_to_targets, make_supervision,
    minimize, reprojection_error, BodyFitResult, ChartComparison, ChartPair, ChartProblem, EvalOut,
    FitReport, Mode, Objective, OptimizerConfig, SkeletonFitResult, TraceRow,
};
pub use skeleton::{
    effective_shape, rest_pose_model, skeleton_forward, skeleton_landmarks, BoneBlock,
    EffectiveShape, PosedSkeleton, SkeletonModel, SkeletonState, SupervisionTarget,
};
pub use synth::{
    body_warm_start, gen_models, gen_scene, warm_start, NoiseSpec, Scene, SizeConfig, Tier,
};
