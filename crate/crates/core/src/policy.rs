//! Action-selection policies: sliding-window UCB for the linear, d-armed,
//! generalized linear, and combinatorial semi-bandit settings, window tuning
//! rules, and the adversarial baselines (EXP3 and its drift-aware variants).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::env::{DecisionView, Observation};
use crate::estimate::{
    confidence_radius, d_armed_radius, glm_confidence_radius, quasi_mle, semi_bandit_radius,
    ConfidenceConfig, EstimateError, ItemCounts, LinkFunction, WindowGramState,
};
use crate::mat::{dot, min_eigenvalue_spd, norm2, SymMat};
use crate::numeric::{ceil_stable, floor_stable};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("decision set is empty")]
    EmptyDecisionSet,
    #[error("{setting} policy cannot act on this decision set")]
    WrongDecisionSet { setting: &'static str },
    #[error("observation kind does not match the policy setting")]
    ObservationMismatch,
    #[error("action is not a single-item indicator, required by the d-armed setting")]
    NotBasisAction,
    #[error("window tuning for this setting requires {0}")]
    MissingTuningInput(&'static str),
    #[error("invalid policy parameter: {0}")]
    BadParam(&'static str),
    #[error("no spanning basis of actions exists for forced exploration")]
    NoSpanningBasis,
}

/// Which reward structure the policy assumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    Linear,
    DArmed,
    Glm,
    SemiBandit,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Linear => "linear",
            Setting::DArmed => "d-armed",
            Setting::Glm => "glm",
            Setting::SemiBandit => "semi-bandit",
        }
    }
}

/// An action chosen by a policy: the vector played, plus its index within the
/// round's explicit decision set when one exists.
#[derive(Clone, Debug, PartialEq)]
pub struct Chosen {
    pub index: Option<usize>,
    pub action: Vec<f64>,
}

/// A sequential decision policy driven by the simulation loop.
pub trait BanditPolicy: Send {
    fn select(
        &mut self,
        view: &DecisionView<'_>,
        rng: &mut ChaCha12Rng,
    ) -> Result<Chosen, PolicyError>;

    fn observe(&mut self, chosen: &Chosen, obs: &Observation) -> Result<(), PolicyError>;

    /// Per-block diagnostics, drained at the end of an episode. Only the
    /// bandit-over-bandit meta policy produces any.
    fn take_blocks(&mut self) -> Vec<crate::bob::BlockRecord> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Window tuning
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowRule {
    /// Rate-optimal window using the known variation budget.
    TunedKnownBudget,
    /// Budget-free window (the budget factor is dropped).
    Oblivious,
    /// Window minimizing the explicit log-factor regret bound.
    OptLogFactor,
    /// Window chosen per block by the meta bandit.
    BobSelected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowChoice {
    pub window: usize,
    pub rule: WindowRule,
}

/// Pre-floor value of the rate-optimal window for a setting.
pub fn tuned_window_raw(
    setting: Setting,
    dim: usize,
    horizon: usize,
    budget: Option<f64>,
    arm_size: Option<usize>,
) -> Result<f64, PolicyError> {
    let d = dim as f64;
    let t = horizon as f64;
    let b_factor = match budget {
        Some(b) if b > 0.0 => b.powf(-2.0 / 3.0),
        Some(_) => return Err(PolicyError::BadParam("budget must be positive")),
        None => 1.0,
    };
    let raw = match setting {
        Setting::Linear | Setting::Glm => (d * t).powf(2.0 / 3.0) * b_factor,
        Setting::DArmed => d.powf(1.0 / 3.0) * t.powf(2.0 / 3.0) * b_factor,
        Setting::SemiBandit => {
            let m = arm_size.ok_or(PolicyError::MissingTuningInput("the arm-size bound"))? as f64;
            d.powf(1.0 / 3.0) * m.powf(-1.0 / 3.0) * t.powf(2.0 / 3.0) * b_factor
        }
    };
    Ok(raw)
}

/// Rate-optimal window, floored and clamped to `[1, horizon]`; the
/// semi-bandit window additionally stays at or above `ceil(d / m)`.
pub fn tuned_window(
    setting: Setting,
    dim: usize,
    horizon: usize,
    budget: Option<f64>,
    arm_size: Option<usize>,
) -> Result<WindowChoice, PolicyError> {
    let raw = tuned_window_raw(setting, dim, horizon, budget, arm_size)?;
    let mut w = floor_stable(raw).max(1.0).min(horizon as f64) as usize;
    if setting == Setting::SemiBandit {
        let m = arm_size.expect("checked above");
        w = w.max(dim.div_ceil(m)).min(horizon.max(1));
    }
    let rule = if budget.is_some() {
        WindowRule::TunedKnownBudget
    } else {
        WindowRule::Oblivious
    };
    Ok(WindowChoice {
        window: w.max(1),
        rule,
    })
}

/// The log-factor-tuned window base value: the window that minimizes the
/// explicit regret bound of the windowed ridge UCB policy, before dividing by
/// the budget term.
pub fn opt_window_raw(dim: usize, horizon: usize, l: f64, lambda: f64, s: f64, r: f64) -> f64 {
    let d = dim as f64;
    let t = horizon as f64;
    let lead = d.powf(1.0 / 3.0) * t.powf(2.0 / 3.0) / (2f64.powf(1.0 / 3.0) * l.powf(2.0 / 3.0));
    let noise =
        (r * (d * (t + t * t * l * l / lambda).ln()).sqrt() + lambda.sqrt() * s).powf(2.0 / 3.0);
    let log_term = (1.0 + t * l * l / (d * lambda * lambda))
        .ln()
        .powf(1.0 / 3.0);
    lead * noise * log_term
}

/// Log-factor-tuned window: `ceil(base / budget^(2/3))` when the budget is
/// known, `ceil(base)` otherwise, clamped to `[1, horizon]`.
pub fn opt_window(
    dim: usize,
    horizon: usize,
    budget: Option<f64>,
    l: f64,
    lambda: f64,
    s: f64,
    r: f64,
) -> Result<WindowChoice, PolicyError> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(PolicyError::BadParam("lambda must be positive"));
    }
    let base = opt_window_raw(dim, horizon, l, lambda, s, r);
    let (value, rule) = match budget {
        Some(b) if b > 0.0 => (base / b.powf(2.0 / 3.0), WindowRule::OptLogFactor),
        Some(_) => return Err(PolicyError::BadParam("budget must be positive")),
        None => (base, WindowRule::Oblivious),
    };
    let w = ceil_stable(value).max(1.0).min(horizon as f64) as usize;
    Ok(WindowChoice {
        window: w.max(1),
        rule,
    })
}

// ---------------------------------------------------------------------------
// Combinatorial argmax
// ---------------------------------------------------------------------------

/// Maximizes an additive per-item score over a decision view.
///
/// Explicit sets are scanned directly (ties break to the lowest index).
/// Implicit subset families use the top-`m` fast path: sort items by score,
/// take the `m` best positive ones (or exactly `m` for exact-size families);
/// ties break to the lowest item index. At least one item is always selected.
pub fn best_additive_action(
    scores: &[f64],
    view: &DecisionView<'_>,
) -> Result<Chosen, PolicyError> {
    match view {
        DecisionView::Explicit(actions) => {
            if actions.is_empty() {
                return Err(PolicyError::EmptyDecisionSet);
            }
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (i, a) in actions.iter().enumerate() {
                let s = additive_score(scores, a);
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            Ok(Chosen {
                index: Some(best),
                action: actions[best].clone(),
            })
        }
        DecisionView::ImplicitSubsets { dim, m, exact } => {
            debug_assert_eq!(scores.len(), *dim);
            let mut order: Vec<usize> = (0..*dim).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let take: Vec<usize> = if *exact {
                order.into_iter().take(*m).collect()
            } else {
                let positive: Vec<usize> = order
                    .iter()
                    .copied()
                    .take(*m)
                    .filter(|&i| scores[i] > 0.0)
                    .collect();
                if positive.is_empty() {
                    vec![order[0]]
                } else {
                    positive
                }
            };
            let mut action = vec![0.0; *dim];
            for i in take {
                action[i] = 1.0;
            }
            Ok(Chosen {
                index: None,
                action,
            })
        }
    }
}

fn additive_score(scores: &[f64], indicator: &[f64]) -> f64 {
    // Sum of selected items' scores; written out so +inf sentinels survive.
    indicator
        .iter()
        .zip(scores)
        .filter(|(&x, _)| x != 0.0)
        .map(|(&x, &s)| x * s)
        .sum()
}

// ---------------------------------------------------------------------------
// Sliding-window UCB policy
// ---------------------------------------------------------------------------

/// Forced-exploration configuration for the generalized linear setting: a
/// spanning subset of the fixed decision set, played cyclically so the
/// windowed design matrix stays invertible.
#[derive(Clone, Debug)]
pub struct GlmConfig {
    pub link: LinkFunction,
    pub y_max: f64,
    pub basis: Vec<Vec<f64>>,
    pub basis_indices: Vec<usize>,
    pub lambda0: f64,
    pub k_mu: f64,
    pub c_mu: f64,
}

impl GlmConfig {
    /// Selects a spanning basis of `dim` actions from a fixed decision set by
    /// greedy residual-volume maximization, and derives the link constants
    /// from the value bound `z_max = L * S`.
    pub fn for_fixed_set(
        link: LinkFunction,
        y_max: f64,
        actions: &[Vec<f64>],
        dim: usize,
        z_max: f64,
    ) -> Result<Self, PolicyError> {
        if actions.is_empty() {
            return Err(PolicyError::EmptyDecisionSet);
        }
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        let mut basis_indices = Vec::new();
        for _ in 0..dim {
            let mut best: Option<(usize, f64, Vec<f64>)> = None;
            for (i, a) in actions.iter().enumerate() {
                if basis_indices.contains(&i) {
                    continue;
                }
                let mut resid = a.clone();
                for q in &ortho {
                    let c = dot(&resid, q);
                    for (r, qi) in resid.iter_mut().zip(q) {
                        *r -= c * qi;
                    }
                }
                let n = norm2(&resid);
                if best.as_ref().is_none_or(|(_, bn, _)| n > *bn) {
                    best = Some((i, n, resid));
                }
            }
            let (idx, n, resid) = best.ok_or(PolicyError::NoSpanningBasis)?;
            if n <= 1e-9 {
                return Err(PolicyError::NoSpanningBasis);
            }
            basis_indices.push(idx);
            ortho.push(resid.into_iter().map(|v| v / n).collect());
        }
        let basis: Vec<Vec<f64>> = basis_indices.iter().map(|&i| actions[i].clone()).collect();
        let mut gram = SymMat::zeros(dim);
        for a in &basis {
            gram.add_outer(a, 1.0);
        }
        let lambda0 = min_eigenvalue_spd(&gram);
        if lambda0 <= 0.0 {
            return Err(PolicyError::NoSpanningBasis);
        }
        Ok(GlmConfig {
            link,
            y_max,
            basis,
            basis_indices,
            lambda0,
            k_mu: link.lipschitz(),
            c_mu: link.min_derivative(z_max),
        })
    }
}

/// Everything needed to build a fresh sliding-window UCB policy with a given
/// window; the meta bandit rebuilds one per block from this.
#[derive(Clone, Debug)]
pub enum SwUcbSpec {
    Linear {
        dim: usize,
        cfg: ConfidenceConfig,
    },
    DArmed {
        dim: usize,
        r: f64,
        horizon: usize,
    },
    Glm {
        dim: usize,
        cfg: ConfidenceConfig,
        glm: GlmConfig,
        horizon: usize,
    },
    SemiBandit {
        dim: usize,
        r: f64,
        horizon: usize,
    },
}

impl SwUcbSpec {
    pub fn setting(&self) -> Setting {
        match self {
            SwUcbSpec::Linear { .. } => Setting::Linear,
            SwUcbSpec::DArmed { .. } => Setting::DArmed,
            SwUcbSpec::Glm { .. } => Setting::Glm,
            SwUcbSpec::SemiBandit { .. } => Setting::SemiBandit,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SwUcbSpec::Linear { dim, .. }
            | SwUcbSpec::DArmed { dim, .. }
            | SwUcbSpec::Glm { dim, .. }
            | SwUcbSpec::SemiBandit { dim, .. } => *dim,
        }
    }

    pub fn build(&self, window: usize) -> Result<SwUcbPolicy, PolicyError> {
        SwUcbPolicy::from_spec(self, window)
    }
}

enum EstimatorState {
    Gram(WindowGramState),
    Items(ItemCounts),
}

/// Optimistic action selection over a sliding-window estimator.
pub struct SwUcbPolicy {
    spec: SwUcbSpec,
    window: usize,
    round: usize,
    beta: f64,
    estimator: EstimatorState,
    warm_theta: Option<Vec<f64>>,
    estimate_outside_ball: u64,
}

impl SwUcbPolicy {
    pub fn from_spec(spec: &SwUcbSpec, window: usize) -> Result<Self, PolicyError> {
        if window == 0 {
            return Err(PolicyError::BadParam("window must be at least 1"));
        }
        let (window, beta, estimator) = match spec {
            SwUcbSpec::Linear { dim, cfg } => {
                let beta = confidence_radius(cfg, *dim, window);
                let state = WindowGramState::new(*dim, window, cfg.lambda)?;
                (window, beta, EstimatorState::Gram(state))
            }
            SwUcbSpec::DArmed { dim, .. } | SwUcbSpec::SemiBandit { dim, .. } => {
                let state = ItemCounts::new(*dim, window)?;
                (window, 0.0, EstimatorState::Items(state))
            }
            SwUcbSpec::Glm {
                dim,
                cfg,
                glm,
                horizon,
            } => {
                // The cyclic forced-exploration schedule needs the window to
                // cover one basis sweep.
                let w = window.max(dim + 1);
                let beta = glm_confidence_radius(
                    glm.k_mu,
                    glm.c_mu,
                    glm.y_max,
                    *dim,
                    w,
                    cfg.l,
                    glm.lambda0,
                    *horizon,
                );
                let state = WindowGramState::new(*dim, w, 0.0)?;
                (w, beta, EstimatorState::Gram(state))
            }
        };
        Ok(SwUcbPolicy {
            spec: spec.clone(),
            window,
            round: 0,
            beta,
            estimator,
            warm_theta: None,
            estimate_outside_ball: 0,
        })
    }

    /// Stationary variant: the window spans the whole horizon, so nothing is
    /// ever forgotten.
    pub fn stationary(spec: &SwUcbSpec, horizon: usize) -> Result<Self, PolicyError> {
        Self::from_spec(spec, horizon.max(1))
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rounds_seen(&self) -> usize {
        self.round
    }

    /// How often the quasi-likelihood estimate landed outside the parameter
    /// norm ball; the estimate is used as-is, this only reports it.
    pub fn estimate_outside_ball(&self) -> u64 {
        self.estimate_outside_ball
    }

    /// Observations currently held by the estimator (at most the window).
    pub fn buffered_len(&self) -> usize {
        match &self.estimator {
            EstimatorState::Gram(g) => g.len(),
            EstimatorState::Items(c) => c.len(),
        }
    }

    fn select_linear(&self, view: &DecisionView<'_>) -> Result<Chosen, PolicyError> {
        let DecisionView::Explicit(actions) = view else {
            return Err(PolicyError::WrongDecisionSet { setting: "linear" });
        };
        if actions.is_empty() {
            return Err(PolicyError::EmptyDecisionSet);
        }
        let EstimatorState::Gram(state) = &self.estimator else {
            unreachable!()
        };
        let theta = state.ridge_estimate()?;
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, x) in actions.iter().enumerate() {
            let score = dot(x, &theta) + self.beta * state.inverse_norm(x)?;
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        Ok(Chosen {
            index: Some(best),
            action: actions[best].clone(),
        })
    }

    fn select_glm(&mut self, view: &DecisionView<'_>) -> Result<Chosen, PolicyError> {
        let DecisionView::Explicit(actions) = view else {
            return Err(PolicyError::WrongDecisionSet { setting: "glm" });
        };
        if actions.is_empty() {
            return Err(PolicyError::EmptyDecisionSet);
        }
        let SwUcbSpec::Glm { dim, cfg, glm, .. } = &self.spec else {
            unreachable!()
        };
        // Rounds 1..=d of every window cycle play the spanning basis.
        let cycle_pos = self.round % self.window;
        if cycle_pos < *dim {
            let idx = glm.basis_indices[cycle_pos];
            return Ok(Chosen {
                index: Some(idx),
                action: glm.basis[cycle_pos].clone(),
            });
        }
        let EstimatorState::Gram(state) = &self.estimator else {
            unreachable!()
        };
        let theta = quasi_mle(
            *dim,
            state.observations(),
            glm.link,
            self.warm_theta.as_deref(),
        )?;
        if norm2(&theta) > cfg.s {
            self.estimate_outside_ball += 1;
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, x) in actions.iter().enumerate() {
            let score = dot(x, &theta) + self.beta * state.inverse_norm(x)?;
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        self.warm_theta = Some(theta);
        Ok(Chosen {
            index: Some(best),
            action: actions[best].clone(),
        })
    }

    fn select_d_armed(&self, view: &DecisionView<'_>) -> Result<Chosen, PolicyError> {
        let DecisionView::Explicit(actions) = view else {
            return Err(PolicyError::WrongDecisionSet { setting: "d-armed" });
        };
        if actions.is_empty() {
            return Err(PolicyError::EmptyDecisionSet);
        }
        let SwUcbSpec::DArmed { dim, r, horizon } = &self.spec else {
            unreachable!()
        };
        let EstimatorState::Items(counts) = &self.estimator else {
            unreachable!()
        };
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, x) in actions.iter().enumerate() {
            let item = basis_item(x)?;
            let n = counts.count(item);
            let score = counts.mean(item).unwrap_or(0.0) + d_armed_radius(*r, *dim, *horizon, n);
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        Ok(Chosen {
            index: Some(best),
            action: actions[best].clone(),
        })
    }

    fn select_semi_bandit(&self, view: &DecisionView<'_>) -> Result<Chosen, PolicyError> {
        let SwUcbSpec::SemiBandit { dim, r, horizon } = &self.spec else {
            unreachable!()
        };
        let EstimatorState::Items(counts) = &self.estimator else {
            unreachable!()
        };
        let scores: Vec<f64> = (0..*dim)
            .map(|i| {
                counts.mean(i).unwrap_or(0.0)
                    + semi_bandit_radius(*r, *dim, *horizon, counts.count(i))
            })
            .collect();
        best_additive_action(&scores, view)
    }
}

/// Item index of a single-item indicator vector.
fn basis_item(action: &[f64]) -> Result<usize, PolicyError> {
    let mut item = None;
    for (i, &v) in action.iter().enumerate() {
        if v == 1.0 && item.is_none() {
            item = Some(i);
        } else if v != 0.0 {
            return Err(PolicyError::NotBasisAction);
        }
    }
    item.ok_or(PolicyError::NotBasisAction)
}

impl BanditPolicy for SwUcbPolicy {
    fn select(
        &mut self,
        view: &DecisionView<'_>,
        _rng: &mut ChaCha12Rng,
    ) -> Result<Chosen, PolicyError> {
        let chosen = match self.spec.setting() {
            Setting::Linear => self.select_linear(view),
            Setting::Glm => self.select_glm(view),
            Setting::DArmed => self.select_d_armed(view),
            Setting::SemiBandit => self.select_semi_bandit(view),
        }?;
        self.round += 1;
        Ok(chosen)
    }

    fn observe(&mut self, chosen: &Chosen, obs: &Observation) -> Result<(), PolicyError> {
        match (&mut self.estimator, obs) {
            (EstimatorState::Gram(state), Observation::Scalar { value, .. }) => {
                state.push(&chosen.action, *value)?;
            }
            (EstimatorState::Items(counts), Observation::Scalar { value, .. }) => {
                let item = basis_item(&chosen.action)?;
                counts.push_round(&[(item, *value)])?;
            }
            (EstimatorState::Items(counts), Observation::SemiBandit { items, .. }) => {
                counts.push_round(items)?;
            }
            (EstimatorState::Gram(_), Observation::SemiBandit { .. }) => {
                return Err(PolicyError::ObservationMismatch);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Adversarial baselines
// ---------------------------------------------------------------------------

const E_MINUS_ONE: f64 = std::f64::consts::E - 1.0;

/// Exponential-weights adversarial bandit over `k` arms with uniform
/// exploration mixing. Rewards are clamped to `[0, 1]` before the
/// importance-weighted update.
pub struct Exp3Policy {
    arms: usize,
    gamma: f64,
    log_weights: Vec<f64>,
    last: Option<(usize, f64)>,
}

impl Exp3Policy {
    pub fn new(arms: usize, horizon: usize) -> Result<Self, PolicyError> {
        let k = arms as f64;
        let gamma = (k * k.ln() / (E_MINUS_ONE * horizon.max(1) as f64))
            .sqrt()
            .min(1.0);
        Self::with_gamma(arms, gamma)
    }

    pub fn with_gamma(arms: usize, gamma: f64) -> Result<Self, PolicyError> {
        if arms < 2 {
            return Err(PolicyError::BadParam("need at least two arms"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(PolicyError::BadParam("gamma must lie in [0, 1]"));
        }
        Ok(Exp3Policy {
            arms,
            gamma,
            log_weights: vec![0.0; arms],
            last: None,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + self.gamma / self.arms as f64)
            .collect()
    }

    fn reset(&mut self) {
        self.log_weights.iter_mut().for_each(|w| *w = 0.0);
        self.last = None;
    }

    fn sample_arm(&self, rng: &mut ChaCha12Rng) -> (usize, f64) {
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return (i, *p);
            }
        }
        (self.arms - 1, probs[self.arms - 1])
    }

    fn update(&mut self, reward: f64) -> Result<(), PolicyError> {
        let (arm, prob) = self.last.take().ok_or(PolicyError::ObservationMismatch)?;
        let estimated = reward.clamp(0.0, 1.0) / prob;
        self.log_weights[arm] += self.gamma * estimated / self.arms as f64;
        Ok(())
    }
}

impl BanditPolicy for Exp3Policy {
    fn select(
        &mut self,
        view: &DecisionView<'_>,
        rng: &mut ChaCha12Rng,
    ) -> Result<Chosen, PolicyError> {
        let DecisionView::Explicit(actions) = view else {
            return Err(PolicyError::WrongDecisionSet { setting: "exp3" });
        };
        if actions.len() != self.arms {
            return Err(PolicyError::BadParam(
                "arm count does not match the decision set",
            ));
        }
        let (arm, prob) = self.sample_arm(rng);
        self.last = Some((arm, prob));
        Ok(Chosen {
            index: Some(arm),
            action: actions[arm].clone(),
        })
    }

    fn observe(&mut self, _chosen: &Chosen, obs: &Observation) -> Result<(), PolicyError> {
        self.update(obs.total_reward())
    }
}

/// Restarted EXP3 for drifting rewards: the horizon splits into batches of
/// `ceil((k ln k)^(1/3) (T / B)^(2/3))` rounds and the weights reset at every
/// batch boundary, with the mixing tuned to the batch length.
pub struct RestartedExp3Policy {
    inner: Exp3Policy,
    batch_len: usize,
    round: usize,
}

impl RestartedExp3Policy {
    pub fn new(arms: usize, horizon: usize, budget: f64) -> Result<Self, PolicyError> {
        if budget <= 0.0 {
            return Err(PolicyError::BadParam("budget must be positive"));
        }
        let k = arms as f64;
        let batch_len = ceil_stable(
            (k * k.ln()).powf(1.0 / 3.0) * (horizon.max(1) as f64 / budget).powf(2.0 / 3.0),
        )
        .max(1.0) as usize;
        let gamma = (k * k.ln() / (E_MINUS_ONE * batch_len as f64))
            .sqrt()
            .min(1.0);
        Ok(RestartedExp3Policy {
            inner: Exp3Policy::with_gamma(arms, gamma)?,
            batch_len,
            round: 0,
        })
    }

    pub fn batch_len(&self) -> usize {
        self.batch_len
    }
}

impl BanditPolicy for RestartedExp3Policy {
    fn select(
        &mut self,
        view: &DecisionView<'_>,
        rng: &mut ChaCha12Rng,
    ) -> Result<Chosen, PolicyError> {
        if self.round.is_multiple_of(self.batch_len) {
            self.inner.reset();
        }
        self.round += 1;
        self.inner.select(view, rng)
    }

    fn observe(&mut self, chosen: &Chosen, obs: &Observation) -> Result<(), PolicyError> {
        self.inner.observe(chosen, obs)
    }
}

/// EXP3.S: exponential weights with a per-round uniform weight share, tuned
/// for an environment whose drift budget maps to a switch count of
/// `max(1, ceil(B))`.
pub struct Exp3SPolicy {
    arms: usize,
    gamma: f64,
    alpha: f64,
    log_weights: Vec<f64>,
    last: Option<(usize, f64)>,
}

impl Exp3SPolicy {
    pub fn new(arms: usize, horizon: usize, budget: f64) -> Result<Self, PolicyError> {
        if arms < 2 {
            return Err(PolicyError::BadParam("need at least two arms"));
        }
        if budget <= 0.0 {
            return Err(PolicyError::BadParam("budget must be positive"));
        }
        let k = arms as f64;
        let t = horizon.max(1) as f64;
        let switches = budget.ceil().max(1.0);
        let gamma = (k * (switches * (k * t).ln() + std::f64::consts::E) / (E_MINUS_ONE * t))
            .sqrt()
            .min(1.0);
        Ok(Exp3SPolicy {
            arms,
            gamma,
            alpha: 1.0 / t,
            log_weights: vec![0.0; arms],
            last: None,
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + self.gamma / self.arms as f64)
            .collect()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl BanditPolicy for Exp3SPolicy {
    fn select(
        &mut self,
        view: &DecisionView<'_>,
        rng: &mut ChaCha12Rng,
    ) -> Result<Chosen, PolicyError> {
        let DecisionView::Explicit(actions) = view else {
            return Err(PolicyError::WrongDecisionSet { setting: "exp3s" });
        };
        if actions.len() != self.arms {
            return Err(PolicyError::BadParam(
                "arm count does not match the decision set",
            ));
        }
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut arm = self.arms - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                arm = i;
                break;
            }
        }
        self.last = Some((arm, probs[arm]));
        Ok(Chosen {
            index: Some(arm),
            action: actions[arm].clone(),
        })
    }

    fn observe(&mut self, _chosen: &Chosen, obs: &Observation) -> Result<(), PolicyError> {
        let (arm, prob) = self.last.take().ok_or(PolicyError::ObservationMismatch)?;
        let estimated = obs.total_reward().clamp(0.0, 1.0) / prob;
        let k = self.arms as f64;
        let log_total = self
            .log_weights
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &lw| log_add(acc, lw));
        let share = (std::f64::consts::E * self.alpha / k).ln() + log_total;
        for (i, lw) in self.log_weights.iter_mut().enumerate() {
            let bumped = if i == arm {
                *lw + self.gamma * estimated / k
            } else {
                *lw
            };
            *lw = log_add(bumped, share);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionSet, ActionSpace, CombinatorialFamily};
    use rand::SeedableRng;

    fn e(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn obs(value: f64) -> Observation {
        Observation::Scalar {
            value,
            clipped: false,
        }
    }

    #[test]
    fn tuned_window_frozen_values() {
        let lin = tuned_window(Setting::Linear, 2, 100_000, Some(1.0), None).unwrap();
        assert_eq!(lin.window, 3419);
        assert_eq!(lin.rule, WindowRule::TunedKnownBudget);
        let darm = tuned_window(Setting::DArmed, 2, 100_000, Some(1.0), None).unwrap();
        assert_eq!(darm.window, 2714);
        let obl = tuned_window(Setting::Linear, 2, 100_000, None, None).unwrap();
        assert_eq!(obl.window, 3419);
        assert_eq!(obl.rule, WindowRule::Oblivious);
    }

    #[test]
    fn tuned_window_budget_scaling() {
        let raw1 = tuned_window_raw(Setting::Linear, 3, 50_000, Some(0.7), None).unwrap();
        let raw8 = tuned_window_raw(Setting::Linear, 3, 50_000, Some(5.6), None).unwrap();
        assert!((raw1 / raw8 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn tuned_window_clamps() {
        let w = tuned_window(Setting::Linear, 100, 10, Some(1e-6), None).unwrap();
        assert_eq!(w.window, 10);
        let w = tuned_window(Setting::SemiBandit, 9, 1000, Some(1000.0), Some(2)).unwrap();
        assert!(w.window >= 5); // ceil(9/2)
    }

    #[test]
    fn opt_window_frozen_value() {
        let raw = opt_window_raw(2, 100_000, 1.0, 1.0, 1.0, 0.1);
        assert!((raw - 6730.39130338811).abs() / raw < 1e-9);
        let opt = opt_window(2, 100_000, Some(1.0), 1.0, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(opt.window, 6731);
        let obl = opt_window(2, 100_000, None, 1.0, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(obl.window, opt.window);
        assert_eq!(obl.rule, WindowRule::Oblivious);
    }

    #[test]
    fn opt_window_nonincreasing_in_budget() {
        let mut last = usize::MAX;
        for b in [0.25, 1.0, 4.0, 16.0] {
            let w = opt_window(2, 100_000, Some(b), 1.0, 1.0, 1.0, 0.1)
                .unwrap()
                .window;
            assert!(w <= last);
            last = w;
        }
    }

    #[test]
    fn d_armed_unvisited_arm_wins() {
        let spec = SwUcbSpec::DArmed {
            dim: 3,
            r: 0.1,
            horizon: 100,
        };
        let mut policy = spec.build(10).unwrap();
        let actions = ActionSet::new(3, ActionSpace::StandardBasis).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // Visit arms 0 and 1 with high rewards; arm 2 stays unvisited.
        for (arm, reward) in [(0usize, 1.0), (1usize, 1.0)] {
            let chosen = Chosen {
                index: Some(arm),
                action: e(3, arm),
            };
            policy.observe(&chosen, &obs(reward)).unwrap();
        }
        let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
        assert_eq!(chosen.index, Some(2));
    }

    #[test]
    fn linear_pure_exploitation_argmax() {
        let cfg = ConfidenceConfig::new(0.0, 1.0, 1e-9, 0.5, 1.0).unwrap();
        let spec = SwUcbSpec::Linear { dim: 2, cfg };
        let mut policy = spec.build(50).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // Feed noiseless pulls so the estimate points along e_0.
        for _ in 0..20 {
            policy
                .observe(
                    &Chosen {
                        index: Some(0),
                        action: e(2, 0),
                    },
                    &obs(1.0),
                )
                .unwrap();
            policy
                .observe(
                    &Chosen {
                        index: Some(1),
                        action: e(2, 1),
                    },
                    &obs(0.0),
                )
                .unwrap();
        }
        let actions = ActionSet::new(2, ActionSpace::StandardBasis).unwrap();
        let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
        assert_eq!(chosen.index, Some(0));
    }

    #[test]
    fn semi_bandit_top_m_matches_expected_subset() {
        let scores = [3.0, 1.0, 2.0, 0.0];
        let view = DecisionView::ImplicitSubsets {
            dim: 4,
            m: 2,
            exact: false,
        };
        let chosen = best_additive_action(&scores, &view).unwrap();
        assert_eq!(chosen.action, vec![1.0, 0.0, 1.0, 0.0]);

        // Brute force over all size-<=2 subsets agrees.
        let mut subsets: Vec<Vec<f64>> = Vec::new();
        for i in 0..4 {
            subsets.push(e(4, i));
            for j in i + 1..4 {
                let mut v = e(4, i);
                v[j] = 1.0;
                subsets.push(v);
            }
        }
        let family = ActionSet::new(
            4,
            ActionSpace::Combinatorial(CombinatorialFamily::Explicit(subsets.clone())),
        )
        .unwrap();
        let brute = best_additive_action(&scores, &family.view_at(0)).unwrap();
        assert_eq!(brute.action, chosen.action);
    }

    #[test]
    fn top_m_with_no_positive_scores_keeps_one_item() {
        let scores = [-1.0, -0.5, -2.0];
        let view = DecisionView::ImplicitSubsets {
            dim: 3,
            m: 2,
            exact: false,
        };
        let chosen = best_additive_action(&scores, &view).unwrap();
        assert_eq!(chosen.action, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn exact_size_family_takes_top_m() {
        let scores = [-1.0, -0.5, -2.0, -0.1];
        let view = DecisionView::ImplicitSubsets {
            dim: 4,
            m: 3,
            exact: true,
        };
        let chosen = best_additive_action(&scores, &view).unwrap();
        assert_eq!(chosen.action, vec![1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn stationary_policy_never_evicts() {
        let cfg = ConfidenceConfig::with_defaults(0.1, 1.0, 1.0, 500).unwrap();
        let spec = SwUcbSpec::Linear { dim: 2, cfg };
        let mut policy = SwUcbPolicy::stationary(&spec, 500).unwrap();
        assert_eq!(policy.window(), 500);
        for i in 0..300 {
            policy
                .observe(
                    &Chosen {
                        index: Some(i % 2),
                        action: e(2, i % 2),
                    },
                    &obs(0.5),
                )
                .unwrap();
        }
        assert_eq!(policy.buffered_len(), 300);
    }

    #[test]
    fn glm_forced_exploration_schedule() {
        let actions: Vec<Vec<f64>> = vec![e(2, 0), e(2, 1), vec![0.6, 0.8]];
        let glm = GlmConfig::for_fixed_set(LinkFunction::Logistic, 1.0, &actions, 2, 1.0).unwrap();
        let cfg = ConfidenceConfig::with_defaults(0.1, 1.0, 1.0, 1000).unwrap();
        let spec = SwUcbSpec::Glm {
            dim: 2,
            cfg,
            glm,
            horizon: 1000,
        };
        let mut policy = spec.build(6).unwrap();
        let set = ActionSet::new(2, ActionSpace::Fixed(actions)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut forced = Vec::new();
        for t in 0..12 {
            let chosen = policy.select(&set.view_at(0), &mut rng).unwrap();
            if t % 6 < 2 {
                forced.push(chosen.action.clone());
            }
            policy.observe(&chosen, &obs(0.5)).unwrap();
        }
        // Both basis actions appear at the head of each window cycle.
        assert_eq!(forced.len(), 4);
        assert_eq!(forced[0], forced[2]);
        assert_eq!(forced[1], forced[3]);
        assert_ne!(forced[0], forced[1]);
    }

    #[test]
    fn glm_spanning_basis_requires_full_rank() {
        let actions = vec![e(3, 0), e(3, 0), e(3, 1)];
        let err = GlmConfig::for_fixed_set(LinkFunction::Logistic, 1.0, &actions, 3, 1.0);
        assert!(matches!(err, Err(PolicyError::NoSpanningBasis)));
    }

    #[test]
    fn exp3_initial_distribution_is_uniform() {
        let policy = Exp3Policy::new(4, 1000).unwrap();
        for p in policy.probabilities() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn exp3_probabilities_stay_on_simplex_with_floor() {
        let mut policy = Exp3Policy::new(3, 50).unwrap();
        let actions = ActionSet::new(3, ActionSpace::StandardBasis).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for t in 0..200 {
            let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
            policy
                .observe(&chosen, &obs(if t % 3 == 0 { 1.0 } else { 0.1 }))
                .unwrap();
            let probs = policy.probabilities();
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for p in probs {
                assert!(p >= policy.gamma() / 3.0 - 1e-12);
            }
        }
    }

    #[test]
    fn exp3_unplayed_arms_keep_their_weights() {
        let mut policy = Exp3Policy::new(3, 100).unwrap();
        let actions = ActionSet::new(3, ActionSpace::StandardBasis).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
        let arm = chosen.index.unwrap();
        let before = policy.log_weights().to_vec();
        policy.observe(&chosen, &obs(0.9)).unwrap();
        for (i, (b, a)) in before.iter().zip(policy.log_weights()).enumerate() {
            if i == arm {
                assert!(a > b);
            } else {
                assert_eq!(a, b, "arm {i} weight changed without being played");
            }
        }
    }

    #[test]
    fn restarted_exp3_resets_at_batch_boundaries() {
        let mut policy = RestartedExp3Policy::new(2, 64, 4.0).unwrap();
        let batch = policy.batch_len();
        assert!(batch >= 1);
        let actions = ActionSet::new(2, ActionSpace::StandardBasis).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..batch {
            let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
            policy.observe(&chosen, &obs(1.0)).unwrap();
        }
        // First round of the next batch starts from reset weights.
        let _ = policy.select(&actions.view_at(0), &mut rng).unwrap();
        assert_eq!(policy.inner.log_weights(), &[0.0, 0.0]);
    }

    #[test]
    fn exp3s_shares_weight_across_arms() {
        let mut policy = Exp3SPolicy::new(3, 100, 2.0).unwrap();
        let actions = ActionSet::new(3, ActionSpace::StandardBasis).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let before = policy.log_weights.clone();
        let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
        policy.observe(&chosen, &obs(1.0)).unwrap();
        // The share term strictly raises every weight.
        for (b, a) in before.iter().zip(&policy.log_weights) {
            assert!(a > b);
        }
        let total: f64 = policy.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adding_constant_to_scores_keeps_argmax() {
        let scores = [0.3, 0.9, 0.4, 0.9];
        let shifted: Vec<f64> = scores.iter().map(|s| s + 5.0).collect();
        let view = DecisionView::ImplicitSubsets {
            dim: 4,
            m: 2,
            exact: true,
        };
        let a = best_additive_action(&scores, &view).unwrap();
        let b = best_additive_action(&shifted, &view).unwrap();
        assert_eq!(a.action, b.action);
    }

    #[test]
    fn selection_depends_only_on_windowed_history() {
        // Two policies fed different pre-window prefixes but the same last
        // `w` observations choose the same action.
        let cfg = ConfidenceConfig::with_defaults(0.1, 1.0, 1.0, 1000).unwrap();
        let spec = SwUcbSpec::Linear { dim: 2, cfg };
        let window = 6;
        let tail: Vec<(usize, f64)> =
            vec![(0, 0.9), (1, 0.1), (0, 0.8), (1, 0.2), (0, 0.9), (1, 0.1)];
        let run = |prefix: &[(usize, f64)]| {
            let mut policy = spec.build(window).unwrap();
            for &(arm, y) in prefix.iter().chain(&tail) {
                policy
                    .observe(
                        &Chosen {
                            index: Some(arm),
                            action: e(2, arm),
                        },
                        &obs(y),
                    )
                    .unwrap();
            }
            let actions = ActionSet::new(2, ActionSpace::StandardBasis).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            policy.select(&actions.view_at(0), &mut rng).unwrap().index
        };
        let a = run(&[(1, 5.0), (1, 5.0), (1, 5.0)]);
        let b = run(&[(0, -3.0), (1, 0.0), (0, -3.0), (1, 7.0)]);
        assert_eq!(a, b);
        assert_eq!(a, Some(0));
    }

    #[test]
    fn ties_break_to_the_lowest_index() {
        // All arms unvisited: every score is the +inf sentinel.
        let spec = SwUcbSpec::DArmed {
            dim: 4,
            r: 0.1,
            horizon: 100,
        };
        let mut policy = spec.build(10).unwrap();
        let actions = ActionSet::new(4, ActionSpace::StandardBasis).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let chosen = policy.select(&actions.view_at(0), &mut rng).unwrap();
        assert_eq!(chosen.index, Some(0));

        // Exactly equal finite scores on an implicit family.
        let view = DecisionView::ImplicitSubsets {
            dim: 3,
            m: 1,
            exact: true,
        };
        let chosen = best_additive_action(&[0.5, 0.5, 0.5], &view).unwrap();
        assert_eq!(chosen.action, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_decision_set_is_rejected() {
        let cfg = ConfidenceConfig::with_defaults(0.1, 1.0, 1.0, 100).unwrap();
        let spec = SwUcbSpec::Linear { dim: 2, cfg };
        let mut policy = spec.build(5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let empty: Vec<Vec<f64>> = Vec::new();
        let err = policy.select(&DecisionView::Explicit(&empty), &mut rng);
        assert!(matches!(err, Err(PolicyError::EmptyDecisionSet)));
    }
}
