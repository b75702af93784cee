//! Sliding-window estimators: windowed ridge regression with an
//! incrementally maintained Gram inverse, per-item window means for the
//! d-armed and semi-bandit settings, and the quasi-likelihood estimator for
//! generalized linear rewards, together with their confidence radii.

use std::collections::VecDeque;

use thiserror::Error;

use crate::mat::{dot, norm2, Cholesky, SymMat};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("regularizer must be nonnegative and finite, got {0}")]
    BadRegularizer(f64),
    #[error("observation has dimension {got}, expected {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("windowed Gram matrix is singular; with zero regularization the ridge solution needs a nonsingular window")]
    SingularGram,
    #[error(
        "quasi-likelihood Jacobian is singular; inject forced exploration of a spanning action set"
    )]
    SingularJacobian,
    #[error("quasi-likelihood solver did not converge; final residual {residual}")]
    NoConvergence { residual: f64 },
    #[error("item index {item} out of range for dimension {dim}")]
    ItemRange { item: usize, dim: usize },
    #[error("invalid confidence parameter: {0}")]
    BadConfidence(&'static str),
}

// ---------------------------------------------------------------------------
// Windowed Gram state
// ---------------------------------------------------------------------------

/// Ring buffer of the most recent `window` (action, reward) pairs together
/// with the regularized Gram matrix `V = lambda*I + sum x x^T`, its
/// maintained inverse, and `sum x*y`.
///
/// The inverse is kept current with rank-one Sherman-Morrison updates for
/// arrivals and downdates for evictions; a full Cholesky recomputation runs
/// every `window` pushes and whenever a downdate would lose positive
/// definiteness, which bounds the numerical drift.
#[derive(Clone, Debug)]
pub struct WindowGramState {
    dim: usize,
    window: usize,
    lambda: f64,
    buffer: VecDeque<(Vec<f64>, f64)>,
    gram: SymMat,
    gram_inv: Option<SymMat>,
    xy_sum: Vec<f64>,
    pushes_since_recompute: usize,
    recompute_count: u64,
}

impl WindowGramState {
    pub fn new(dim: usize, window: usize, lambda: f64) -> Result<Self, EstimateError> {
        if dim == 0 {
            return Err(EstimateError::ZeroDim);
        }
        if window == 0 {
            return Err(EstimateError::ZeroWindow);
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(EstimateError::BadRegularizer(lambda));
        }
        let gram = SymMat::scaled_identity(dim, lambda);
        let gram_inv = if lambda > 0.0 {
            Some(SymMat::scaled_identity(dim, 1.0 / lambda))
        } else {
            None
        };
        Ok(WindowGramState {
            dim,
            window,
            lambda,
            buffer: VecDeque::with_capacity(window + 1),
            gram,
            gram_inv,
            xy_sum: vec![0.0; dim],
            pushes_since_recompute: 0,
            recompute_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn gram(&self) -> &SymMat {
        &self.gram
    }

    pub fn gram_inverse(&self) -> Option<&SymMat> {
        self.gram_inv.as_ref()
    }

    /// Windowed observations, oldest first.
    pub fn observations(&self) -> impl Iterator<Item = (&[f64], f64)> + Clone + '_ {
        self.buffer.iter().map(|(x, y)| (x.as_slice(), *y))
    }

    /// Number of full recomputations triggered so far.
    pub fn recompute_count(&self) -> u64 {
        self.recompute_count
    }

    /// Appends an observation, evicting the oldest one once the buffer
    /// exceeds the window.
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<(), EstimateError> {
        if x.len() != self.dim {
            return Err(EstimateError::DimMismatch {
                got: x.len(),
                expected: self.dim,
            });
        }
        self.buffer.push_back((x.to_vec(), y));
        self.gram.add_outer(x, 1.0);
        for (acc, &xi) in self.xy_sum.iter_mut().zip(x) {
            *acc += y * xi;
        }
        if let Some(inv) = &mut self.gram_inv {
            sherman_morrison_update(inv, x);
        }

        if self.buffer.len() > self.window {
            let (old_x, old_y) = self.buffer.pop_front().expect("nonempty");
            self.gram.add_outer(&old_x, -1.0);
            for (acc, &xi) in self.xy_sum.iter_mut().zip(&old_x) {
                *acc -= old_y * xi;
            }
            let ok = match &mut self.gram_inv {
                Some(inv) => sherman_morrison_downdate(inv, &old_x),
                None => false,
            };
            if !ok {
                self.recompute();
            }
        }

        self.pushes_since_recompute += 1;
        if self.pushes_since_recompute >= self.window {
            self.recompute();
        } else if self.gram_inv.is_none() {
            // With lambda = 0 an inverse only exists once the window spans
            // the space; keep trying until it does.
            self.gram_inv = self.gram.inverse();
        }
        Ok(())
    }

    /// The windowed ridge solution `V^{-1} (sum x*y)`.
    pub fn ridge_estimate(&self) -> Result<Vec<f64>, EstimateError> {
        match &self.gram_inv {
            Some(inv) => Ok(inv.matvec(&self.xy_sum)),
            None => Err(EstimateError::SingularGram),
        }
    }

    /// `sqrt(x^T V^{-1} x)`, the exploration norm of an action.
    pub fn inverse_norm(&self, x: &[f64]) -> Result<f64, EstimateError> {
        match &self.gram_inv {
            Some(inv) => Ok(inv.quad_form(x).max(0.0).sqrt()),
            None => Err(EstimateError::SingularGram),
        }
    }

    /// On-demand check of the maintained inverse: max entry of `V V^{-1} - I`.
    pub fn inverse_residual(&self) -> Option<f64> {
        self.gram_inv
            .as_ref()
            .map(|inv| self.gram.product_identity_residual(inv))
    }

    fn recompute(&mut self) {
        let mut gram = SymMat::scaled_identity(self.dim, self.lambda);
        let mut xy = vec![0.0; self.dim];
        for (x, y) in &self.buffer {
            gram.add_outer(x, 1.0);
            for (acc, &xi) in xy.iter_mut().zip(x) {
                *acc += *y * xi;
            }
        }
        self.gram_inv = gram.inverse();
        self.gram = gram;
        self.xy_sum = xy;
        self.pushes_since_recompute = 0;
        self.recompute_count += 1;
    }
}

/// `inv <- (M + x x^T)^{-1}` given `inv = M^{-1}`.
fn sherman_morrison_update(inv: &mut SymMat, x: &[f64]) {
    let ix = inv.matvec(x);
    let denom = 1.0 + dot(x, &ix);
    inv.add_outer(&ix, -1.0 / denom);
}

/// `inv <- (M - x x^T)^{-1}` given `inv = M^{-1}`; false when the downdate
/// would leave the matrix indefinite.
fn sherman_morrison_downdate(inv: &mut SymMat, x: &[f64]) -> bool {
    let ix = inv.matvec(x);
    let denom = 1.0 - dot(x, &ix);
    if denom <= 1e-12 {
        return false;
    }
    inv.add_outer(&ix, 1.0 / denom);
    true
}

// ---------------------------------------------------------------------------
// Confidence radii
// ---------------------------------------------------------------------------

/// Parameters of the windowed ridge confidence radius.
#[derive(Clone, Copy, Debug)]
pub struct ConfidenceConfig {
    /// Sub-Gaussian variance proxy of the reward noise.
    pub r: f64,
    /// Bound on action norms.
    pub l: f64,
    /// Bound on parameter norms.
    pub s: f64,
    /// Failure probability, in (0, 1].
    pub delta: f64,
    /// Ridge regularizer.
    pub lambda: f64,
}

impl ConfidenceConfig {
    pub fn new(r: f64, l: f64, s: f64, delta: f64, lambda: f64) -> Result<Self, EstimateError> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(EstimateError::BadConfidence("r must be nonnegative"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(EstimateError::BadConfidence("l must be positive"));
        }
        if !(s >= 0.0 && s.is_finite()) {
            return Err(EstimateError::BadConfidence("s must be nonnegative"));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(EstimateError::BadConfidence("delta must lie in (0, 1]"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(EstimateError::BadConfidence("lambda must be nonnegative"));
        }
        Ok(ConfidenceConfig {
            r,
            l,
            s,
            delta,
            lambda,
        })
    }

    /// Defaults for a horizon-`T` run: `delta = 1/T` and
    /// `lambda = max(1, 1/s^2)`, which keeps the radius at least 1.
    pub fn with_defaults(r: f64, l: f64, s: f64, horizon: usize) -> Result<Self, EstimateError> {
        let delta = 1.0 / (horizon.max(1) as f64);
        let lambda = if s > 0.0 {
            (1.0 / (s * s)).max(1.0)
        } else {
            1.0
        };
        Self::new(r, l, s, delta, lambda)
    }
}

/// Confidence radius of the windowed ridge estimator:
/// `R * sqrt(d * ln((1 + w L^2 / lambda) / delta)) + sqrt(lambda) * S`.
pub fn confidence_radius(cfg: &ConfidenceConfig, dim: usize, window: usize) -> f64 {
    let w = window as f64;
    cfg.r * (dim as f64 * ((1.0 + w * cfg.l * cfg.l / cfg.lambda) / cfg.delta).ln()).sqrt()
        + cfg.lambda.sqrt() * cfg.s
}

/// Per-arm radius for windowed sample means over a horizon of `t_max`
/// rounds: `R * sqrt(2 ln(2 d T^2) / n)`, infinite for unvisited arms.
pub fn d_armed_radius(r: f64, dim: usize, t_max: usize, count: u64) -> f64 {
    if count == 0 {
        return f64::INFINITY;
    }
    let t = t_max as f64;
    r * (2.0 * (2.0 * dim as f64 * t * t).ln() / count as f64).sqrt()
}

/// Per-item radius for semi-bandit window means:
/// `4 R * sqrt(ln(2 d T^2) / (n + 1))`; finite even for unvisited items.
pub fn semi_bandit_radius(r: f64, dim: usize, t_max: usize, count: u64) -> f64 {
    let t = t_max as f64;
    4.0 * r * ((2.0 * dim as f64 * t * t).ln() / (count as f64 + 1.0)).sqrt()
}

// ---------------------------------------------------------------------------
// Per-item windowed counts (d-armed / semi-bandit)
// ---------------------------------------------------------------------------

/// Windowed per-item pull counts and reward sums, fed one round at a time.
///
/// Sums are kept bit-exact as left-to-right sums over each item's buffered
/// rewards: appending extends such a sum exactly, and evictions trigger a
/// canonical re-sum of the (short) per-item queue, so anything older than
/// the window has no influence at all, not even in the last ulp.
#[derive(Clone, Debug)]
pub struct ItemCounts {
    dim: usize,
    window: usize,
    rounds: VecDeque<Vec<(usize, f64)>>,
    rewards: Vec<VecDeque<f64>>,
    sums: Vec<f64>,
}

impl ItemCounts {
    pub fn new(dim: usize, window: usize) -> Result<Self, EstimateError> {
        if dim == 0 {
            return Err(EstimateError::ZeroDim);
        }
        if window == 0 {
            return Err(EstimateError::ZeroWindow);
        }
        Ok(ItemCounts {
            dim,
            window,
            rounds: VecDeque::with_capacity(window + 1),
            rewards: vec![VecDeque::new(); dim],
            sums: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of rounds currently buffered.
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Records one round's observed items, evicting the round that left the
    /// window.
    pub fn push_round(&mut self, observed: &[(usize, f64)]) -> Result<(), EstimateError> {
        for &(item, _) in observed {
            if item >= self.dim {
                return Err(EstimateError::ItemRange {
                    item,
                    dim: self.dim,
                });
            }
        }
        self.rounds.push_back(observed.to_vec());
        for &(item, reward) in observed {
            self.rewards[item].push_back(reward);
            self.sums[item] += reward;
        }
        if self.rounds.len() > self.window {
            let old = self.rounds.pop_front().expect("nonempty");
            for (item, _) in old {
                self.rewards[item].pop_front();
                self.sums[item] = self.rewards[item].iter().sum();
            }
        }
        Ok(())
    }

    pub fn count(&self, item: usize) -> u64 {
        self.rewards[item].len() as u64
    }

    pub fn reward_sum(&self, item: usize) -> f64 {
        self.sums[item]
    }

    /// Windowed mean of one item, `None` when it was never selected in the
    /// window.
    pub fn mean(&self, item: usize) -> Option<f64> {
        let n = self.rewards[item].len();
        if n == 0 {
            None
        } else {
            Some(self.sums[item] / n as f64)
        }
    }

    /// Windowed means with unvisited items reported as 0, matching the
    /// pseudo-inverse least-squares solution at zero regularization.
    pub fn means(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.mean(i).unwrap_or(0.0)).collect()
    }
}

// ---------------------------------------------------------------------------
// Generalized linear estimation
// ---------------------------------------------------------------------------

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logistic_derivative(z: f64) -> f64 {
    let m = logistic(z);
    m * (1.0 - m)
}

/// Inverse link function of a generalized linear reward model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkFunction {
    Identity,
    Logistic,
}

impl LinkFunction {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            LinkFunction::Identity => z,
            LinkFunction::Logistic => logistic(z),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logistic => logistic_derivative(z),
        }
    }

    /// Lipschitz constant of the link.
    pub fn lipschitz(&self) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logistic => 0.25,
        }
    }

    /// Infimum of the derivative over `|z| <= z_max`.
    pub fn min_derivative(&self, z_max: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logistic => logistic_derivative(z_max.abs()),
        }
    }
}

const QUASI_MLE_TOL: f64 = 1e-10;
const QUASI_MLE_MAX_ITERS: usize = 100;
const QUASI_MLE_MAX_HALVINGS: usize = 30;

/// Root of the quasi-likelihood equation
/// `sum_s (y_s - mu(<x_s, theta>)) x_s = 0` over the windowed observations,
/// found by damped Newton iteration started from `warm_start` (or zero).
///
/// Converges to residual norm <= 1e-10 or reports the final residual.
pub fn quasi_mle<'a, I>(
    dim: usize,
    observations: I,
    link: LinkFunction,
    warm_start: Option<&[f64]>,
) -> Result<Vec<f64>, EstimateError>
where
    I: IntoIterator<Item = (&'a [f64], f64)> + Clone,
{
    let mut theta = match warm_start {
        Some(w) if w.len() == dim => w.to_vec(),
        _ => vec![0.0; dim],
    };

    let residual = |theta: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; dim];
        for (x, y) in observations.clone() {
            let err = y - link.value(dot(x, theta));
            for (gi, &xi) in g.iter_mut().zip(x) {
                *gi += err * xi;
            }
        }
        g
    };

    let mut g = residual(&theta);
    let mut g_norm = norm2(&g);
    for _ in 0..QUASI_MLE_MAX_ITERS {
        if g_norm <= QUASI_MLE_TOL {
            return Ok(theta);
        }
        // Jacobian of the negative residual: sum mu'(<x, theta>) x x^T.
        let mut jac = SymMat::zeros(dim);
        for (x, _) in observations.clone() {
            jac.add_outer(x, link.derivative(dot(x, &theta)));
        }
        let chol: Cholesky = jac.cholesky().ok_or(EstimateError::SingularJacobian)?;
        let step = chol.solve(&g);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=QUASI_MLE_MAX_HALVINGS {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| t + scale * s)
                .collect();
            let cand_g = residual(&candidate);
            let cand_norm = norm2(&cand_g);
            if cand_norm < g_norm {
                theta = candidate;
                g = cand_g;
                g_norm = cand_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(EstimateError::NoConvergence { residual: g_norm });
        }
    }
    if g_norm <= QUASI_MLE_TOL {
        Ok(theta)
    } else {
        Err(EstimateError::NoConvergence { residual: g_norm })
    }
}

/// Confidence radius of the windowed quasi-likelihood estimator:
/// `2 k Y_max sqrt(2 d ln(w) ln(2 d T^2) (3 + 2 ln(1 + 2 L^2 / lambda_0))) / c`.
#[allow(clippy::too_many_arguments)]
pub fn glm_confidence_radius(
    k_mu: f64,
    c_mu: f64,
    y_max: f64,
    dim: usize,
    window: usize,
    l: f64,
    lambda0: f64,
    t_max: usize,
) -> f64 {
    let d = dim as f64;
    let t = t_max as f64;
    let w = window as f64;
    2.0 * k_mu
        * y_max
        * (2.0
            * d
            * w.ln()
            * (2.0 * d * t * t).ln()
            * (3.0 + 2.0 * (1.0 + 2.0 * l * l / lambda0).ln()))
        .sqrt()
        / c_mu
}
