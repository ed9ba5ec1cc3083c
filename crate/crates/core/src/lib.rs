//! Distributionally robust training over mixtures of preference groups.
//!
//! The crate covers radius calibration for multinomial mixtures, exact inner
//! solvers for χ², KL and Wasserstein ambiguity sets, bounded REBEL and DPO
//! losses, synthetic data generators, the training loops built on top of them,
//! and the experiment drivers that turn runs into CSV tables.

pub mod calibration;
pub mod error;
pub mod experiments;
pub mod inner;
pub mod losses;
pub mod numerics;
pub mod simulator;
pub mod trainer;

pub use calibration::{chi2_quantile_wh, inverse_normal, pearson_statistic, RadiusSchedule};
pub use error::{Error, Result};
pub use inner::{
    chi2_dual_solve, kl_tilt_weights, mixture_chi2_argmax, mixture_chi2_argmax_with, wasserstein_penalty,
    AmbiguitySpec, DualVariables, InnerSolution, MixtureMode,
};
pub use losses::{bound_constants, dpo_loss, rebel_loss, BoundConstants, PreferenceSample};
pub use numerics::{fit_loglog, make_rng, LogLogFit, ProbVector, RngStream};
pub use simulator::{
    default_env, make_env, make_preference_env, sample_dataset, sample_preferences, GroupedDataset, Mixing,
    MixtureEnv, PreferenceEnv,
};
pub use trainer::{
    batch_objective, robust_group_gradient, train_preference, train_radius_coverage, PreferenceConfig,
    PreferenceLoss, TrainConfig,
};
