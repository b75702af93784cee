//! Non-stationary bandit optimization toolkit.
//!
//! The crate covers the full loop of a drifting-bandit study:
//!
//! * [`env`] — drifting environments: parameter paths under a variation
//!   budget, synthetic generators (sinusoidal, piecewise-linear, blockwise
//!   stress instances), noise models, and CSV replay of external data;
//! * [`estimate`] — sliding-window estimators (windowed ridge regression
//!   with Sherman-Morrison maintenance, per-item window means, windowed
//!   quasi-likelihood) and their confidence radii;
//! * [`policy`] — sliding-window UCB action selection for linear, d-armed,
//!   generalized linear, and combinatorial semi-bandit rewards, window
//!   tuning rules, and adversarial baselines (EXP3, restarted EXP3, EXP3.S);
//! * [`bob`] — the bandit-over-bandit meta-algorithm that learns the window
//!   size online with an exponential-weights layer over a geometric ladder,
//!   restarting the base policy every block;
//! * [`sim`] — seeded episodes with dynamic-regret accounting, parallel
//!   replication, and log-log regret-growth fits.
//!
//! Every run is reproducible: generators and episodes are pure functions of
//! their seeds.

pub mod bob;
pub mod env;
pub mod estimate;
pub mod mat;
pub mod numeric;
pub mod policy;
pub mod sim;

pub use bob::{bob_run, BlockRecord, BobError, BobParams, BobPolicy, LadderArm, MetaExp3};
pub use env::{
    load_replay_csv, make_lower_bound_instance, make_piecewise_linear, make_sinusoidal,
    variation_budget, ActionSet, ActionSpace, CombinatorialFamily, DecisionView, EnvError,
    EnvironmentInstance, NoiseKind, NoiseModel, Observation, ParameterPath, RewardKind,
    VariationNorm,
};
pub use estimate::{
    confidence_radius, d_armed_radius, glm_confidence_radius, quasi_mle, semi_bandit_radius,
    ConfidenceConfig, EstimateError, ItemCounts, LinkFunction, WindowGramState,
};
pub use policy::{
    best_additive_action, opt_window, tuned_window, BanditPolicy, Chosen, Exp3Policy, Exp3SPolicy,
    GlmConfig, PolicyError, RestartedExp3Policy, Setting, SwUcbPolicy, SwUcbSpec, WindowChoice,
    WindowRule,
};
pub use sim::{
    loglog_slope, oracle_value, replicate, replicate_detailed, run_episode, ExperimentSummary,
    RegretTrace, ReplicationOutput, SimError, SlopeFit,
};
