//! Drifting bandit environments: parameter paths under a variation budget,
//! per-round decision sets, noise models, synthetic instance generators, and
//! a CSV replay path for user-supplied data.
//!
//! Rounds are 0-based in code; the CSV formats number rounds `1..=T`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::estimate::logistic;
use crate::mat::{dot, norm2};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("parameter path must contain at least one round")]
    EmptyPath,
    #[error("theta at round {round} has dimension {got}, expected {expected}")]
    ThetaDim {
        round: usize,
        got: usize,
        expected: usize,
    },
    #[error("theta norm {norm} at round {round} exceeds bound {bound}")]
    ThetaNorm { round: usize, norm: f64, bound: f64 },
    #[error("non-finite value in theta at round {round}")]
    ThetaNotFinite { round: usize },
    #[error("action set must contain at least one action")]
    EmptyActionSet,
    #[error("action {index} has dimension {got}, expected {expected}")]
    ActionDim {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("action {index} is not a 0/1 indicator vector")]
    NotIndicator { index: usize },
    #[error("combinatorial action {index} selects no items")]
    EmptyArm { index: usize },
    #[error("arm size bound {m} must lie in 1..={dim}")]
    ArmSizeBound { m: usize, dim: usize },
    #[error("per-round action sets cover {got} rounds, horizon is {expected}")]
    PerRoundLen { got: usize, expected: usize },
    #[error("round index {round} out of range for horizon {horizon}")]
    RoundRange { round: usize, horizon: usize },
    #[error("action does not belong to the round-{round} decision set")]
    ActionNotInSet { round: usize },
    #[error("dimension mismatch: path has {path_dim}, actions have {action_dim}")]
    DimMismatch { path_dim: usize, action_dim: usize },
    #[error("linear instance not normalized: |<x, theta_{round}>| = {value} exceeds 1")]
    NotNormalized { round: usize, value: f64 },
    #[error("semi-bandit mean reward {value} at round {round}, item {item} outside [0, 1]")]
    MeanOutOfRange {
        round: usize,
        item: usize,
        value: f64,
    },
    #[error("{what} requires {requirement}")]
    Incompatible {
        what: &'static str,
        requirement: &'static str,
    },
    #[error("horizon must be at least {min}, got {got}")]
    HorizonTooSmall { min: usize, got: usize },
    #[error("n_breaks = {n_breaks} must be at most horizon - 2 = {max}")]
    TooManyBreaks { n_breaks: usize, max: usize },
    #[error("budget {b_t} outside admissible range [{lo}, {hi}]")]
    BudgetRange { b_t: f64, lo: f64, hi: f64 },
    #[error("budget must be positive, got {0}")]
    BudgetNotPositive(f64),
    #[error("{file}: row {row}: expected {expected} columns, found {got}")]
    CsvColumns {
        file: &'static str,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{file}: row {row}: cannot parse `{cell}` as a number")]
    CsvNumber {
        file: &'static str,
        row: usize,
        cell: String,
    },
    #[error("{file}: row {row}: expected round {expected}, found {got}")]
    CsvRoundOrder {
        file: &'static str,
        row: usize,
        expected: usize,
        got: String,
    },
    #[error("{file}: missing header row")]
    CsvMissingHeader { file: &'static str },
    #[error("{file}: bad header `{got}`, expected `{expected}`")]
    CsvHeader {
        file: &'static str,
        got: String,
        expected: String,
    },
    #[error("{file}: no actions declared for round {round}")]
    CsvMissingRound { file: &'static str, round: usize },
    #[error("actions of kind {0} cannot be written to CSV")]
    CsvUnsupportedActions(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Parameter paths
// ---------------------------------------------------------------------------

/// The full latent parameter sequence `theta_1..theta_T`, with a norm bound
/// that every round respects.
#[derive(Clone, Debug)]
pub struct ParameterPath {
    dim: usize,
    thetas: Vec<Vec<f64>>,
    norm_bound: f64,
}

impl ParameterPath {
    pub fn new(thetas: Vec<Vec<f64>>, norm_bound: f64) -> Result<Self, EnvError> {
        if thetas.is_empty() {
            return Err(EnvError::EmptyPath);
        }
        let dim = thetas[0].len();
        for (t, th) in thetas.iter().enumerate() {
            if th.len() != dim {
                return Err(EnvError::ThetaDim {
                    round: t + 1,
                    got: th.len(),
                    expected: dim,
                });
            }
            if th.iter().any(|v| !v.is_finite()) {
                return Err(EnvError::ThetaNotFinite { round: t + 1 });
            }
            let n = norm2(th);
            if n > norm_bound * (1.0 + 1e-12) + 1e-12 {
                return Err(EnvError::ThetaNorm {
                    round: t + 1,
                    norm: n,
                    bound: norm_bound,
                });
            }
        }
        Ok(ParameterPath {
            dim,
            thetas,
            norm_bound,
        })
    }

    /// Builds a path whose norm bound is the measured maximum norm.
    pub fn with_measured_bound(thetas: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        let bound = thetas.iter().map(|th| norm2(th)).fold(0.0_f64, f64::max);
        Self::new(thetas, bound)
    }

    pub fn horizon(&self) -> usize {
        self.thetas.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Parameters of 0-based round `t`.
    pub fn theta(&self, t: usize) -> &[f64] {
        &self.thetas[t]
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariationNorm {
    Euclidean,
    Infinity,
}

/// Total variation `sum_t ||theta_{t+1} - theta_t||` under the chosen norm.
pub fn variation_budget(path: &ParameterPath, norm: VariationNorm) -> f64 {
    let mut total = 0.0;
    for pair in path.thetas.windows(2) {
        let step = pair[0].iter().zip(&pair[1]).map(|(a, b)| b - a);
        total += match norm {
            VariationNorm::Euclidean => step.map(|d| d * d).sum::<f64>().sqrt(),
            VariationNorm::Infinity => step.fold(0.0_f64, |m, d| m.max(d.abs())),
        };
    }
    total
}

// ---------------------------------------------------------------------------
// Action sets
// ---------------------------------------------------------------------------

/// Family of combinatorial actions (0/1 indicator vectors over `dim` items).
#[derive(Clone, Debug)]
pub enum CombinatorialFamily {
    /// Explicitly enumerated indicator vectors.
    Explicit(Vec<Vec<f64>>),
    /// Every nonempty subset of at most `m` items.
    SubsetsUpTo { m: usize },
    /// Every subset of exactly `m` items.
    SubsetsExactly { m: usize },
}

/// How the per-round decision sets are produced.
#[derive(Clone, Debug)]
pub enum ActionSpace {
    /// One fixed finite set of d-vectors, available every round.
    Fixed(Vec<Vec<f64>>),
    /// A separate finite set per round.
    PerRound(Vec<Vec<Vec<f64>>>),
    /// The `d` standard basis vectors (the d-armed bandit).
    StandardBasis,
    /// Indicator vectors over `d` items with bounded arm size.
    Combinatorial(CombinatorialFamily),
}

/// Per-round decision sets with their family kind and action norm bound `L`.
#[derive(Clone, Debug)]
pub struct ActionSet {
    dim: usize,
    norm_bound: f64,
    space: ActionSpace,
    basis_cache: Vec<Vec<f64>>,
}

/// Borrowed view of one round's decision set.
#[derive(Clone, Copy, Debug)]
pub enum DecisionView<'a> {
    /// An explicit finite list of actions; selection returns an index into it.
    Explicit(&'a [Vec<f64>]),
    /// All subsets of `dim` items with at most (or exactly) `m` items.
    ImplicitSubsets { dim: usize, m: usize, exact: bool },
}

impl ActionSet {
    pub fn new(dim: usize, space: ActionSpace) -> Result<Self, EnvError> {
        if dim == 0 {
            return Err(EnvError::EmptyActionSet);
        }
        let validate_finite = |actions: &[Vec<f64>]| -> Result<f64, EnvError> {
            if actions.is_empty() {
                return Err(EnvError::EmptyActionSet);
            }
            let mut max_norm = 0.0_f64;
            for (i, a) in actions.iter().enumerate() {
                if a.len() != dim {
                    return Err(EnvError::ActionDim {
                        index: i,
                        got: a.len(),
                        expected: dim,
                    });
                }
                max_norm = max_norm.max(norm2(a));
            }
            Ok(max_norm)
        };
        let validate_indicator = |actions: &[Vec<f64>]| -> Result<usize, EnvError> {
            let mut m = 0usize;
            for (i, a) in actions.iter().enumerate() {
                if a.len() != dim {
                    return Err(EnvError::ActionDim {
                        index: i,
                        got: a.len(),
                        expected: dim,
                    });
                }
                if a.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(EnvError::NotIndicator { index: i });
                }
                let ones = a.iter().filter(|&&v| v == 1.0).count();
                if ones == 0 {
                    return Err(EnvError::EmptyArm { index: i });
                }
                m = m.max(ones);
            }
            Ok(m)
        };

        let mut basis_cache = Vec::new();
        let norm_bound = match &space {
            ActionSpace::Fixed(actions) => validate_finite(actions)?,
            ActionSpace::PerRound(rounds) => {
                if rounds.is_empty() {
                    return Err(EnvError::EmptyActionSet);
                }
                let mut max_norm = 0.0_f64;
                for set in rounds {
                    max_norm = max_norm.max(validate_finite(set)?);
                }
                max_norm
            }
            ActionSpace::StandardBasis => {
                basis_cache = (0..dim)
                    .map(|i| {
                        let mut e = vec![0.0; dim];
                        e[i] = 1.0;
                        e
                    })
                    .collect();
                1.0
            }
            ActionSpace::Combinatorial(family) => match family {
                CombinatorialFamily::Explicit(actions) => {
                    if actions.is_empty() {
                        return Err(EnvError::EmptyActionSet);
                    }
                    let m = validate_indicator(actions)?;
                    (m as f64).sqrt()
                }
                CombinatorialFamily::SubsetsUpTo { m }
                | CombinatorialFamily::SubsetsExactly { m } => {
                    if *m == 0 || *m > dim {
                        return Err(EnvError::ArmSizeBound { m: *m, dim });
                    }
                    (*m as f64).sqrt()
                }
            },
        };
        Ok(ActionSet {
            dim,
            norm_bound,
            space,
            basis_cache,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Maximum Euclidean norm over all actions (`L`).
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn is_standard_basis(&self) -> bool {
        matches!(self.space, ActionSpace::StandardBasis)
    }

    pub fn is_combinatorial(&self) -> bool {
        matches!(self.space, ActionSpace::Combinatorial(_))
    }

    /// Maximum number of selected items over the family (combinatorial only).
    pub fn max_arm_size(&self) -> Option<usize> {
        match &self.space {
            ActionSpace::Combinatorial(CombinatorialFamily::Explicit(actions)) => Some(
                actions
                    .iter()
                    .map(|a| a.iter().filter(|&&v| v == 1.0).count())
                    .max()
                    .unwrap_or(0),
            ),
            ActionSpace::Combinatorial(
                CombinatorialFamily::SubsetsUpTo { m } | CombinatorialFamily::SubsetsExactly { m },
            ) => Some(*m),
            _ => None,
        }
    }

    /// Number of rounds the set is defined for, when it varies by round.
    pub fn per_round_len(&self) -> Option<usize> {
        match &self.space {
            ActionSpace::PerRound(rounds) => Some(rounds.len()),
            _ => None,
        }
    }

    pub fn view_at(&self, t: usize) -> DecisionView<'_> {
        match &self.space {
            ActionSpace::Fixed(actions) => DecisionView::Explicit(actions),
            ActionSpace::PerRound(rounds) => DecisionView::Explicit(&rounds[t]),
            ActionSpace::StandardBasis => DecisionView::Explicit(&self.basis_cache),
            ActionSpace::Combinatorial(CombinatorialFamily::Explicit(actions)) => {
                DecisionView::Explicit(actions)
            }
            ActionSpace::Combinatorial(CombinatorialFamily::SubsetsUpTo { m }) => {
                DecisionView::ImplicitSubsets {
                    dim: self.dim,
                    m: *m,
                    exact: false,
                }
            }
            ActionSpace::Combinatorial(CombinatorialFamily::SubsetsExactly { m }) => {
                DecisionView::ImplicitSubsets {
                    dim: self.dim,
                    m: *m,
                    exact: true,
                }
            }
        }
    }
}

impl<'a> DecisionView<'a> {
    /// Whether `action` belongs to this decision set. Explicit sets are
    /// matched by exact equality.
    pub fn contains(&self, action: &[f64]) -> bool {
        match self {
            DecisionView::Explicit(actions) => actions.iter().any(|a| a.as_slice() == action),
            DecisionView::ImplicitSubsets { dim, m, exact } => {
                if action.len() != *dim || action.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return false;
                }
                let ones = action.iter().filter(|&&v| v == 1.0).count();
                if *exact {
                    ones == *m
                } else {
                    ones >= 1 && ones <= *m
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Noise and rewards
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    /// Per-item Bernoulli draws for semi-bandit feedback.
    Bernoulli,
}

/// Sub-Gaussian noise with variance proxy `R`.
#[derive(Clone, Copy, Debug)]
pub struct NoiseModel {
    pub variance_proxy: f64,
    pub kind: NoiseKind,
}

impl NoiseModel {
    pub fn gaussian(variance_proxy: f64) -> Self {
        NoiseModel {
            variance_proxy,
            kind: NoiseKind::Gaussian,
        }
    }

    /// Bernoulli item rewards in [0, 1]; those are 1/2-sub-Gaussian.
    pub fn bernoulli_items() -> Self {
        NoiseModel {
            variance_proxy: 0.5,
            kind: NoiseKind::Bernoulli,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardKind {
    Linear,
    GlmLogistic,
    SemiBandit,
}

/// Feedback revealed to the learner after playing an action.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Scalar {
        value: f64,
        clipped: bool,
    },
    /// Realized reward of every selected item, plus their sum.
    SemiBandit {
        items: Vec<(usize, f64)>,
        total: f64,
    },
}

impl Observation {
    pub fn total_reward(&self) -> f64 {
        match self {
            Observation::Scalar { value, .. } => *value,
            Observation::SemiBandit { total, .. } => *total,
        }
    }

    pub fn clipped(&self) -> bool {
        matches!(self, Observation::Scalar { clipped: true, .. })
    }
}

// ---------------------------------------------------------------------------
// Environment instances
// ---------------------------------------------------------------------------

/// An immutable drifting bandit instance; safe to share across episodes.
#[derive(Clone, Debug)]
pub struct EnvironmentInstance {
    path: ParameterPath,
    actions: ActionSet,
    noise: NoiseModel,
    reward_kind: RewardKind,
    value_bound: f64,
}

impl EnvironmentInstance {
    /// Validates the instance, including the `|<x, theta_t>| <= 1`
    /// normalization for linear rewards.
    pub fn new(
        path: ParameterPath,
        actions: ActionSet,
        noise: NoiseModel,
        reward_kind: RewardKind,
    ) -> Result<Self, EnvError> {
        let env = Self::new_unnormalized(path, actions, noise, reward_kind)?;
        if env.reward_kind == RewardKind::Linear && env.value_bound > 1.0 + 1e-9 {
            // Find the offending round for the error message.
            for t in 0..env.horizon() {
                if let DecisionView::Explicit(set) = env.decisions_at(t) {
                    for a in set {
                        let v = dot(a, env.path.theta(t)).abs();
                        if v > 1.0 + 1e-9 {
                            return Err(EnvError::NotNormalized {
                                round: t + 1,
                                value: v,
                            });
                        }
                    }
                }
            }
        }
        Ok(env)
    }

    /// Like [`EnvironmentInstance::new`] but skips the normalization
    /// requirement; the measured value bound is kept for downstream reward
    /// scaling. Replayed real-world data is loaded through this path.
    pub fn new_unnormalized(
        path: ParameterPath,
        actions: ActionSet,
        noise: NoiseModel,
        reward_kind: RewardKind,
    ) -> Result<Self, EnvError> {
        if path.dim() != actions.dim() {
            return Err(EnvError::DimMismatch {
                path_dim: path.dim(),
                action_dim: actions.dim(),
            });
        }
        if let Some(len) = actions.per_round_len() {
            if len != path.horizon() {
                return Err(EnvError::PerRoundLen {
                    got: len,
                    expected: path.horizon(),
                });
            }
        }
        match reward_kind {
            RewardKind::SemiBandit => {
                if !actions.is_combinatorial() {
                    return Err(EnvError::Incompatible {
                        what: "semi-bandit reward",
                        requirement: "a combinatorial action family",
                    });
                }
                for t in 0..path.horizon() {
                    for (i, &v) in path.theta(t).iter().enumerate() {
                        if !(0.0..=1.0).contains(&v) {
                            return Err(EnvError::MeanOutOfRange {
                                round: t + 1,
                                item: i,
                                value: v,
                            });
                        }
                    }
                }
            }
            RewardKind::GlmLogistic => {
                if actions.per_round_len().is_some() {
                    return Err(EnvError::Incompatible {
                        what: "generalized linear reward",
                        requirement: "a time-invariant decision set",
                    });
                }
            }
            RewardKind::Linear => {
                if actions.is_combinatorial() {
                    return Err(EnvError::Incompatible {
                        what: "linear reward",
                        requirement: "a finite (non-combinatorial) decision set",
                    });
                }
            }
        }
        let mut env = EnvironmentInstance {
            path,
            actions,
            noise,
            reward_kind,
            value_bound: 0.0,
        };
        env.value_bound = env.compute_value_bound();
        Ok(env)
    }

    fn compute_value_bound(&self) -> f64 {
        match self.reward_kind {
            RewardKind::SemiBandit => self.actions.max_arm_size().unwrap_or(1) as f64,
            RewardKind::GlmLogistic => 1.0,
            RewardKind::Linear => {
                let mut worst = 0.0_f64;
                for t in 0..self.horizon() {
                    if let DecisionView::Explicit(set) = self.decisions_at(t) {
                        for a in set {
                            worst = worst.max(dot(a, self.path.theta(t)).abs());
                        }
                    }
                }
                worst
            }
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn horizon(&self) -> usize {
        self.path.horizon()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn path(&self) -> &ParameterPath {
        &self.path
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward_kind
    }

    /// Measured bound on `|<x, theta_t>|` (linear), `m` (semi-bandit) or the
    /// reward clip bound (logistic).
    pub fn value_bound(&self) -> f64 {
        self.value_bound
    }

    pub fn decisions_at(&self, t: usize) -> DecisionView<'_> {
        self.actions.view_at(t)
    }

    /// Mean reward of playing `action` at round `t` (no noise).
    pub fn mean_value(&self, t: usize, action: &[f64]) -> f64 {
        let z = dot(action, self.path.theta(t));
        match self.reward_kind {
            RewardKind::Linear | RewardKind::SemiBandit => z,
            RewardKind::GlmLogistic => logistic(z),
        }
    }

    /// Draws the observation for playing `action` at 0-based round `t`.
    ///
    /// The action must belong to the round's decision set.
    pub fn sample_reward(
        &self,
        t: usize,
        action: &[f64],
        rng: &mut ChaCha12Rng,
    ) -> Result<Observation, EnvError> {
        if t >= self.horizon() {
            return Err(EnvError::RoundRange {
                round: t,
                horizon: self.horizon(),
            });
        }
        if !self.decisions_at(t).contains(action) {
            return Err(EnvError::ActionNotInSet { round: t + 1 });
        }
        let theta = self.path.theta(t);
        match self.reward_kind {
            RewardKind::Linear => {
                let value = dot(action, theta) + self.draw_gaussian(rng);
                Ok(Observation::Scalar {
                    value,
                    clipped: false,
                })
            }
            RewardKind::GlmLogistic => {
                let raw = logistic(dot(action, theta)) + self.draw_gaussian(rng);
                let value = raw.clamp(0.0, 1.0);
                Ok(Observation::Scalar {
                    value,
                    clipped: value != raw,
                })
            }
            RewardKind::SemiBandit => {
                let mut items = Vec::new();
                let mut total = 0.0;
                for (i, &x) in action.iter().enumerate() {
                    if x == 1.0 {
                        let w = if rng.random::<f64>() < theta[i] {
                            1.0
                        } else {
                            0.0
                        };
                        items.push((i, w));
                        total += w;
                    }
                }
                Ok(Observation::SemiBandit { items, total })
            }
        }
    }

    fn draw_gaussian(&self, rng: &mut ChaCha12Rng) -> f64 {
        let r = self.noise.variance_proxy;
        if r == 0.0 {
            0.0
        } else {
            Normal::new(0.0, r).expect("valid noise scale").sample(rng)
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// Two-armed instance whose arm means trace opposing sinusoids; the drift
/// speed scales with the budget knob `b_t`. Gaussian noise with R = 0.1.
pub fn make_sinusoidal(horizon: usize, b_t: f64) -> Result<EnvironmentInstance, EnvError> {
    if horizon == 0 {
        return Err(EnvError::HorizonTooSmall { min: 1, got: 0 });
    }
    if b_t <= 0.0 {
        return Err(EnvError::BudgetNotPositive(b_t));
    }
    let t_f = horizon as f64;
    let thetas: Vec<Vec<f64>> = (1..=horizon)
        .map(|t| {
            let phase = 5.0 * b_t * std::f64::consts::PI * t as f64 / t_f;
            vec![
                0.5 + 0.3 * phase.sin(),
                0.5 + 0.3 * (std::f64::consts::PI + phase).sin(),
            ]
        })
        .collect();
    let path = ParameterPath::with_measured_bound(thetas)?;
    let actions = ActionSet::new(2, ActionSpace::StandardBasis)?;
    EnvironmentInstance::new(path, actions, NoiseModel::gaussian(0.1), RewardKind::Linear)
}

/// Piecewise-linear parameter path: `n_breaks` interior breakpoints sampled
/// without replacement, unit-norm knot vectors, linear interpolation between
/// consecutive knots. Returns the path plus the 1-based breakpoints and knots.
#[allow(clippy::type_complexity)]
pub fn piecewise_linear_path(
    horizon: usize,
    dim: usize,
    n_breaks: usize,
    seed: u64,
) -> Result<(ParameterPath, Vec<usize>, Vec<Vec<f64>>), EnvError> {
    if horizon < 2 {
        return Err(EnvError::HorizonTooSmall {
            min: 2,
            got: horizon,
        });
    }
    if n_breaks > horizon - 2 {
        return Err(EnvError::TooManyBreaks {
            n_breaks,
            max: horizon - 2,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Interior breakpoints from {2..=horizon-1}, sorted.
    let mut taus: Vec<usize> = sample_indices(&mut rng, horizon - 2, n_breaks)
        .into_iter()
        .map(|i| i + 2)
        .collect();
    taus.sort_unstable();
    let mut knots_at = Vec::with_capacity(n_breaks + 2);
    knots_at.push(1);
    knots_at.extend(taus);
    knots_at.push(horizon);
    let knots: Vec<Vec<f64>> = (0..knots_at.len())
        .map(|_| random_unit_vector(dim, &mut rng))
        .collect();

    let mut thetas = vec![Vec::new(); horizon];
    for s in 0..knots_at.len() - 1 {
        let (lo, hi) = (knots_at[s], knots_at[s + 1]);
        let span = (hi - lo) as f64;
        for t in lo..=hi {
            let wl = (hi - t) as f64 / span;
            let wr = (t - lo) as f64 / span;
            thetas[t - 1] = knots[s]
                .iter()
                .zip(&knots[s + 1])
                .map(|(a, b)| wl * a + wr * b)
                .collect();
        }
    }
    let path = ParameterPath::new(thetas, 1.0)?;
    Ok((path, knots_at, knots))
}

/// Piecewise-linear instance on the standard basis (K-armed view).
pub fn make_piecewise_linear(
    horizon: usize,
    dim: usize,
    n_breaks: usize,
    seed: u64,
) -> Result<EnvironmentInstance, EnvError> {
    let (path, _, _) = piecewise_linear_path(horizon, dim, n_breaks, seed)?;
    let actions = ActionSet::new(dim, ActionSpace::StandardBasis)?;
    EnvironmentInstance::new(path, actions, NoiseModel::gaussian(0.1), RewardKind::Linear)
}

/// Piecewise-linear instance with a fixed decision set of `n_actions` random
/// unit vectors.
pub fn make_piecewise_linear_with_actions(
    horizon: usize,
    dim: usize,
    n_breaks: usize,
    n_actions: usize,
    seed: u64,
) -> Result<EnvironmentInstance, EnvError> {
    let (path, _, _) = piecewise_linear_path(horizon, dim, n_breaks, seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let set: Vec<Vec<f64>> = (0..n_actions.max(1))
        .map(|_| random_unit_vector(dim, &mut rng))
        .collect();
    let actions = ActionSet::new(dim, ActionSpace::Fixed(set))?;
    EnvironmentInstance::new(path, actions, NoiseModel::gaussian(0.1), RewardKind::Linear)
}

/// Number of random unit vectors in the default lower-bound decision set.
pub const LOWER_BOUND_BALL_SAMPLE: usize = 64;

/// Blockwise-constant stress instance: the horizon splits into blocks of
/// length `ceil((dT)^(2/3) B^(-2/3))`, and each block draws its parameters
/// uniformly from the hypercube corners `{+-sqrt(d/4H)}^d`. The continuous
/// unit-ball decision set is discretized to `k_unit_vectors` random unit
/// vectors plus the signed basis vectors.
pub fn make_lower_bound_instance(
    horizon: usize,
    dim: usize,
    b_t: f64,
    seed: u64,
) -> Result<EnvironmentInstance, EnvError> {
    make_lower_bound_instance_with(horizon, dim, b_t, seed, LOWER_BOUND_BALL_SAMPLE)
}

pub fn make_lower_bound_instance_with(
    horizon: usize,
    dim: usize,
    b_t: f64,
    seed: u64,
    k_unit_vectors: usize,
) -> Result<EnvironmentInstance, EnvError> {
    if horizon == 0 || dim == 0 {
        return Err(EnvError::HorizonTooSmall {
            min: 1,
            got: horizon,
        });
    }
    let t_f = horizon as f64;
    let d_f = dim as f64;
    let lo = d_f / t_f.sqrt();
    let hi = 8.0 * t_f / (d_f * d_f);
    if !(lo..=hi).contains(&b_t) {
        return Err(EnvError::BudgetRange { b_t, lo, hi });
    }
    let block_len = crate::numeric::ceil_stable((d_f * t_f).powf(2.0 / 3.0) * b_t.powf(-2.0 / 3.0))
        .min(horizon as f64) as usize;
    let magnitude = (d_f / (4.0 * block_len as f64)).sqrt();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_blocks = horizon.div_ceil(block_len);
    let mut thetas = Vec::with_capacity(horizon);
    for _ in 0..n_blocks {
        let corner: Vec<f64> = (0..dim)
            .map(|_| {
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        for _ in 0..block_len {
            if thetas.len() == horizon {
                break;
            }
            thetas.push(corner.clone());
        }
    }
    let norm_bound = magnitude * d_f.sqrt();
    let path = ParameterPath::new(thetas, norm_bound)?;

    let mut set = Vec::with_capacity(k_unit_vectors + 2 * dim);
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        set.push(e.clone());
        e[i] = -1.0;
        set.push(e);
    }
    for _ in 0..k_unit_vectors {
        set.push(random_unit_vector(dim, &mut rng));
    }
    let actions = ActionSet::new(dim, ActionSpace::Fixed(set))?;
    EnvironmentInstance::new(path, actions, NoiseModel::gaussian(0.1), RewardKind::Linear)
}

fn random_unit_vector(dim: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

// ---------------------------------------------------------------------------
// CSV replay
// ---------------------------------------------------------------------------

const PATH_FILE: &str = "path csv";
const ACTIONS_FILE: &str = "actions csv";

/// Writes the parameter path as `t,theta_1,...,theta_d` rows, rounds 1..=T.
pub fn write_path_csv(path: &ParameterPath, out: &mut impl Write) -> io::Result<()> {
    write!(out, "t")?;
    for j in 1..=path.dim() {
        write!(out, ",theta_{j}")?;
    }
    writeln!(out)?;
    for t in 0..path.horizon() {
        write!(out, "{}", t + 1)?;
        for v in path.theta(t) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes an explicit action set as `t,action_id,x_1,...,x_d` rows; actions
/// available in every round use `t=*`.
pub fn write_actions_csv(actions: &ActionSet, out: &mut impl Write) -> Result<(), EnvError> {
    write!(out, "t,action_id")?;
    for j in 1..=actions.dim() {
        write!(out, ",x_{j}")?;
    }
    writeln!(out)?;
    let write_row = |out: &mut dyn Write, t: &str, id: usize, a: &[f64]| -> io::Result<()> {
        write!(out, "{t},{id}")?;
        for v in a {
            write!(out, ",{v}")?;
        }
        writeln!(out)
    };
    match actions.space() {
        ActionSpace::Fixed(set) => {
            for (id, a) in set.iter().enumerate() {
                write_row(out, "*", id, a)?;
            }
        }
        ActionSpace::StandardBasis => {
            for (id, a) in actions.basis_cache.iter().enumerate() {
                write_row(out, "*", id, a)?;
            }
        }
        ActionSpace::PerRound(rounds) => {
            for (t, set) in rounds.iter().enumerate() {
                for (id, a) in set.iter().enumerate() {
                    write_row(out, &(t + 1).to_string(), id, a)?;
                }
            }
        }
        ActionSpace::Combinatorial(CombinatorialFamily::Explicit(set)) => {
            for (id, a) in set.iter().enumerate() {
                write_row(out, "*", id, a)?;
            }
        }
        ActionSpace::Combinatorial(_) => {
            return Err(EnvError::CsvUnsupportedActions("implicit combinatorial"));
        }
    }
    Ok(())
}

/// Parses a `t,theta_1,...,theta_d` file; rounds must run 1..=T in order.
pub fn read_path_csv(reader: impl BufRead) -> Result<ParameterPath, EnvError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(EnvError::CsvMissingHeader { file: PATH_FILE })?;
    let header = header?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 2 || cols[0] != "t" || !cols[1..].iter().all(|c| c.starts_with("theta_")) {
        return Err(EnvError::CsvHeader {
            file: PATH_FILE,
            got: header.clone(),
            expected: "t,theta_1,...,theta_d".into(),
        });
    }
    let dim = cols.len() - 1;
    let mut thetas = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1; // 1-based, header is row 1
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != dim + 1 {
            return Err(EnvError::CsvColumns {
                file: PATH_FILE,
                row,
                expected: dim + 1,
                got: cells.len(),
            });
        }
        let expected_round = thetas.len() + 1;
        let round: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| EnvError::CsvRoundOrder {
                file: PATH_FILE,
                row,
                expected: expected_round,
                got: cells[0].to_string(),
            })?;
        if round != expected_round {
            return Err(EnvError::CsvRoundOrder {
                file: PATH_FILE,
                row,
                expected: expected_round,
                got: cells[0].to_string(),
            });
        }
        let mut theta = Vec::with_capacity(dim);
        for cell in &cells[1..] {
            let v: f64 = cell.trim().parse().map_err(|_| EnvError::CsvNumber {
                file: PATH_FILE,
                row,
                cell: cell.to_string(),
            })?;
            theta.push(v);
        }
        thetas.push(theta);
    }
    ParameterPath::with_measured_bound(thetas)
}

/// Parses a `t,action_id,x_1,...,x_d` file. Rows with `t=*` are available in
/// every round; other rows attach the action to one round.
pub fn read_actions_csv(reader: impl BufRead, horizon: usize) -> Result<ActionSet, EnvError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(EnvError::CsvMissingHeader { file: ACTIONS_FILE })?;
    let header = header?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "action_id" {
        return Err(EnvError::CsvHeader {
            file: ACTIONS_FILE,
            got: header.clone(),
            expected: "t,action_id,x_1,...,x_d".into(),
        });
    }
    let dim = cols.len() - 2;
    let mut shared: Vec<Vec<f64>> = Vec::new();
    let mut per_round: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon];
    let mut any_per_round = false;
    for (idx, line) in lines {
        let row = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != dim + 2 {
            return Err(EnvError::CsvColumns {
                file: ACTIONS_FILE,
                row,
                expected: dim + 2,
                got: cells.len(),
            });
        }
        let mut x = Vec::with_capacity(dim);
        for cell in &cells[2..] {
            let v: f64 = cell.trim().parse().map_err(|_| EnvError::CsvNumber {
                file: ACTIONS_FILE,
                row,
                cell: cell.to_string(),
            })?;
            x.push(v);
        }
        let t_cell = cells[0].trim();
        if t_cell == "*" {
            shared.push(x);
        } else {
            let round: usize = t_cell.parse().map_err(|_| EnvError::CsvNumber {
                file: ACTIONS_FILE,
                row,
                cell: t_cell.to_string(),
            })?;
            if round == 0 || round > horizon {
                return Err(EnvError::CsvMissingRound {
                    file: ACTIONS_FILE,
                    round,
                });
            }
            per_round[round - 1].push(x);
            any_per_round = true;
        }
    }
    if !any_per_round {
        if shared.is_empty() {
            return Err(EnvError::EmptyActionSet);
        }
        return ActionSet::new(dim, ActionSpace::Fixed(shared));
    }
    for (t, extra) in per_round.iter_mut().enumerate() {
        let mut set = shared.clone();
        set.append(extra);
        if set.is_empty() {
            return Err(EnvError::CsvMissingRound {
                file: ACTIONS_FILE,
                round: t + 1,
            });
        }
        *extra = set;
    }
    ActionSet::new(dim, ActionSpace::PerRound(per_round))
}

/// Loads a replay environment from a path CSV and an actions CSV.
///
/// The loaded instance carries Gaussian noise with R = 0.1 by default
/// (swap it with [`EnvironmentInstance::with_noise`]) and is not required to
/// satisfy the unit normalization; its measured value bound is recorded.
pub fn load_replay_csv(
    path_file: &Path,
    actions_file: &Path,
) -> Result<EnvironmentInstance, EnvError> {
    let path = read_path_csv(BufReader::new(File::open(path_file)?))?;
    let actions = read_actions_csv(BufReader::new(File::open(actions_file)?), path.horizon())?;
    EnvironmentInstance::new_unnormalized(
        path,
        actions,
        NoiseModel::gaussian(0.1),
        RewardKind::Linear,
    )
}
