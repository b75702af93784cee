//! Bandit-over-bandit meta-algorithm: the horizon splits into blocks, an
//! adversarial exponential-weights layer picks a window size from a geometric
//! ladder at each block, and a fresh sliding-window UCB instance runs for the
//! block. No estimator state crosses a block boundary; that restart is what
//! makes the meta layer's reward feedback well defined.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::env::{DecisionView, EnvironmentInstance, Observation};
use crate::numeric::floor_stable;
use crate::policy::{BanditPolicy, Chosen, PolicyError, Setting, SwUcbSpec};
use crate::sim::{run_episode, RegretTrace, SimError};

#[derive(Debug, Error)]
pub enum BobError {
    #[error("horizon must be at least 4, got {0}")]
    HorizonTooSmall(usize),
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("arm size must be at least 1")]
    ZeroArmSize,
    #[error("invalid parameter: {0}")]
    BadParam(&'static str),
    #[error("meta update arrived without a preceding window sample")]
    UpdateWithoutSample,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One rung of the candidate-window ladder. Window values repeat for small
/// block lengths; duplicates are merged and carry their multiplicity so the
/// merged arm keeps the pooled share of the exploration floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LadderArm {
    /// Smallest ladder exponent mapping to this window.
    pub exponent: u32,
    pub window: usize,
    pub multiplicity: u32,
}

/// Block length, candidate-window ladder, and reward normalizer of the meta
/// layer.
#[derive(Clone, Debug)]
pub struct BobParams {
    pub setting: Setting,
    /// Block length `H`.
    pub block_len: usize,
    /// Ladder exponent count; the ladder holds `Delta + 1` rungs before
    /// deduplication.
    pub delta: u32,
    /// Deduplicated ascending candidate windows.
    pub ladder: Vec<LadderArm>,
    /// Block-reward normalizer `Q`.
    pub normalizer: f64,
    /// Per-round mean-reward magnitude bound.
    pub reward_bound: f64,
}

impl BobParams {
    /// Linear setting: `H = floor(d sqrt(T))`,
    /// `Q = 2(H nu + 2 R sqrt(H ln(T / sqrt(H))))` with `nu = 1`.
    pub fn linear(dim: usize, horizon: usize, r: f64) -> Result<Self, BobError> {
        Self::linear_with_bound(dim, horizon, r, 1.0)
    }

    pub fn linear_with_bound(
        dim: usize,
        horizon: usize,
        r: f64,
        reward_bound: f64,
    ) -> Result<Self, BobError> {
        let (d, t) = validate(dim, horizon)?;
        let h = clamp_block(floor_stable(d * t.sqrt()), horizon);
        Self::assemble(
            Setting::Linear,
            h,
            horizon,
            noise_normalizer(h, t, r, reward_bound),
            reward_bound,
        )
    }

    /// d-armed setting: `H = floor(sqrt(dT))`, same normalizer as linear.
    pub fn d_armed(dim: usize, horizon: usize, r: f64) -> Result<Self, BobError> {
        Self::d_armed_with_bound(dim, horizon, r, 1.0)
    }

    pub fn d_armed_with_bound(
        dim: usize,
        horizon: usize,
        r: f64,
        reward_bound: f64,
    ) -> Result<Self, BobError> {
        let (d, t) = validate(dim, horizon)?;
        let h = clamp_block(floor_stable((d * t).sqrt()), horizon);
        Self::assemble(
            Setting::DArmed,
            h,
            horizon,
            noise_normalizer(h, t, r, reward_bound),
            reward_bound,
        )
    }

    /// Generalized linear setting: `H = floor(sqrt(dT))`, `Q = 2 H Y_max`
    /// (block rewards are deterministically bounded by `H Y_max`).
    pub fn glm(dim: usize, horizon: usize, y_max: f64) -> Result<Self, BobError> {
        if y_max <= 0.0 {
            return Err(BobError::BadParam("y_max must be positive"));
        }
        let (d, t) = validate(dim, horizon)?;
        let h = clamp_block(floor_stable((d * t).sqrt()), horizon);
        let q = 2.0 * h as f64 * y_max;
        Self::assemble(Setting::Glm, h, horizon, q, y_max)
    }

    /// Combinatorial semi-bandit setting: `H = floor(sqrt(dT/m))`,
    /// `Q = 2 H m` (block rewards are deterministically bounded by `H m`).
    pub fn semi_bandit(dim: usize, horizon: usize, arm_size: usize) -> Result<Self, BobError> {
        if arm_size == 0 {
            return Err(BobError::ZeroArmSize);
        }
        let (d, t) = validate(dim, horizon)?;
        let h = clamp_block(floor_stable((d * t / arm_size as f64).sqrt()), horizon);
        let q = 2.0 * h as f64 * arm_size as f64;
        Self::assemble(Setting::SemiBandit, h, horizon, q, arm_size as f64)
    }

    fn assemble(
        setting: Setting,
        block_len: usize,
        _horizon: usize,
        normalizer: f64,
        reward_bound: f64,
    ) -> Result<Self, BobError> {
        let h = block_len.max(1);
        let delta = (h as f64).ln().ceil().max(0.0) as u32;
        let mut ladder: Vec<LadderArm> = Vec::new();
        for j in 0..=delta {
            let window = ladder_window(h, j, delta);
            match ladder.last_mut() {
                Some(arm) if arm.window == window => arm.multiplicity += 1,
                _ => ladder.push(LadderArm {
                    exponent: j,
                    window,
                    multiplicity: 1,
                }),
            }
        }
        Ok(BobParams {
            setting,
            block_len: h,
            delta,
            ladder,
            normalizer,
            reward_bound,
        })
    }

    /// Candidate windows, ascending.
    pub fn windows(&self) -> Vec<usize> {
        self.ladder.iter().map(|arm| arm.window).collect()
    }

    pub fn n_blocks(&self, horizon: usize) -> usize {
        horizon.div_ceil(self.block_len)
    }
}

fn validate(dim: usize, horizon: usize) -> Result<(f64, f64), BobError> {
    if dim == 0 {
        return Err(BobError::ZeroDim);
    }
    if horizon < 4 {
        return Err(BobError::HorizonTooSmall(horizon));
    }
    Ok((dim as f64, horizon as f64))
}

fn clamp_block(h: f64, horizon: usize) -> usize {
    (h.max(1.0) as usize).min(horizon)
}

/// `Q = 2 (H nu + 2 R sqrt(H ln(T / sqrt(H))))`
fn noise_normalizer(h: usize, t: f64, r: f64, nu: f64) -> f64 {
    let hf = h as f64;
    2.0 * (hf * nu + 2.0 * r * (hf * (t / hf.sqrt()).ln().max(0.0)).sqrt())
}

/// `floor(H^(j/Delta))`, with the endpoints pinned exactly.
fn ladder_window(h: usize, j: u32, delta: u32) -> usize {
    if j == 0 {
        return 1;
    }
    if j == delta {
        return h;
    }
    floor_stable((h as f64).powf(j as f64 / delta as f64)).max(1.0) as usize
}

/// A sampled ladder rung for one block.
#[derive(Clone, Copy, Debug)]
pub struct LadderDraw {
    pub arm: usize,
    pub exponent: u32,
    pub window: usize,
    pub probability: f64,
}

/// Outcome of feeding one block's reward back to the meta layer.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutcome {
    /// `1/2 + block_reward / Q` before clamping.
    pub raw_normalized: f64,
    /// The clamped value actually used in the weight update.
    pub normalized: f64,
    pub clamped: bool,
}

/// Exponential-weights state over the window ladder.
///
/// The mixing parameter follows the adversarial-bandit tuning for
/// `ceil(T / H)` meta-rounds over `Delta + 1` ladder positions. Weights are
/// kept in log domain so long horizons cannot overflow them.
#[derive(Clone, Debug)]
pub struct MetaExp3 {
    gamma: f64,
    floor_share: f64,
    log_weights: Vec<f64>,
    block: usize,
    last: Option<(usize, f64)>,
    clamp_events: u64,
}

impl MetaExp3 {
    pub fn new(params: &BobParams, horizon: usize) -> Self {
        let arms = params.delta as f64 + 1.0;
        let n_blocks = params.n_blocks(horizon) as f64;
        let gamma = (arms * arms.ln() / ((std::f64::consts::E - 1.0) * n_blocks))
            .sqrt()
            .min(1.0);
        MetaExp3 {
            gamma,
            floor_share: gamma / arms,
            log_weights: vec![0.0; params.ladder.len()],
            block: 0,
            last: None,
            clamp_events: 0,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Exploration floor `gamma / (Delta + 1)` per ladder rung.
    pub fn floor_share(&self) -> f64 {
        self.floor_share
    }

    /// Completed meta-rounds.
    pub fn block_index(&self) -> usize {
        self.block
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Sampling distribution over the deduplicated ladder: exponential
    /// weights mixed with the exploration floor, where a merged rung pools
    /// the floor mass of every exponent that collapsed onto it.
    pub fn probabilities(&self, params: &BobParams) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = self.log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .zip(&params.ladder)
            .map(|(w, arm)| {
                (1.0 - self.gamma) * w / total + self.floor_share * arm.multiplicity as f64
            })
            .collect()
    }

    /// Samples the window for the next block and records the draw for the
    /// matching update.
    pub fn sample(&mut self, params: &BobParams, rng: &mut ChaCha12Rng) -> LadderDraw {
        let probs = self.probabilities(params);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut arm = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                arm = i;
                break;
            }
        }
        self.last = Some((arm, probs[arm]));
        LadderDraw {
            arm,
            exponent: params.ladder[arm].exponent,
            window: params.ladder[arm].window,
            probability: probs[arm],
        }
    }

    /// Feeds back the block's total realized reward. The reward normalizes to
    /// `1/2 + sum / Q`, which concentration keeps inside [0, 1] with high
    /// probability; stray values are clamped and counted. Only the sampled
    /// rung's weight moves.
    pub fn update(
        &mut self,
        params: &BobParams,
        block_reward: f64,
    ) -> Result<BlockOutcome, BobError> {
        let (arm, prob) = self.last.take().ok_or(BobError::UpdateWithoutSample)?;
        let raw = 0.5 + block_reward / params.normalizer;
        let normalized = raw.clamp(0.0, 1.0);
        let clamped = normalized != raw;
        if clamped {
            self.clamp_events += 1;
        }
        let arms = params.delta as f64 + 1.0;
        self.log_weights[arm] += self.gamma / (arms * prob) * normalized;
        self.block += 1;
        Ok(BlockOutcome {
            raw_normalized: raw,
            normalized,
            clamped,
        })
    }
}

/// Per-block diagnostics of a bandit-over-bandit run.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    /// 1-based block index.
    pub block: usize,
    /// Ladder exponent of the sampled window.
    pub exponent: u32,
    pub window: usize,
    /// Normalized block reward before clamping.
    pub raw_normalized: f64,
    pub clamped: bool,
}

struct CurrentBlock {
    draw: LadderDraw,
    reward_sum: f64,
    rounds: usize,
}

/// The meta policy: samples a window per block, runs a freshly restarted
/// sliding-window UCB instance for the block, and feeds the block's total
/// reward back to the exponential-weights layer.
pub struct BobPolicy {
    params: BobParams,
    spec: SwUcbSpec,
    meta: MetaExp3,
    horizon: usize,
    rounds_seen: usize,
    inner: Option<crate::policy::SwUcbPolicy>,
    current: Option<CurrentBlock>,
    records: Vec<BlockRecord>,
}

impl BobPolicy {
    pub fn new(params: BobParams, spec: SwUcbSpec, horizon: usize) -> Result<Self, BobError> {
        if params.setting != spec.setting() {
            return Err(BobError::BadParam(
                "meta parameters and policy spec disagree on the setting",
            ));
        }
        let meta = MetaExp3::new(&params, horizon);
        Ok(BobPolicy {
            params,
            spec,
            meta,
            horizon,
            rounds_seen: 0,
            inner: None,
            current: None,
            records: Vec::new(),
        })
    }

    pub fn meta(&self) -> &MetaExp3 {
        &self.meta
    }

    pub fn params(&self) -> &BobParams {
        &self.params
    }

    pub fn records(&self) -> &[BlockRecord] {
        &self.records
    }

    #[cfg(test)]
    pub(crate) fn inner_buffered_len(&self) -> Option<usize> {
        self.inner.as_ref().map(|p| p.buffered_len())
    }

    fn close_block(&mut self) -> Result<(), BobError> {
        if let Some(block) = self.current.take() {
            let outcome = self.meta.update(&self.params, block.reward_sum)?;
            self.records.push(BlockRecord {
                block: self.records.len() + 1,
                exponent: block.draw.exponent,
                window: block.draw.window,
                raw_normalized: outcome.raw_normalized,
                clamped: outcome.clamped,
            });
            self.inner = None;
        }
        Ok(())
    }
}

impl BanditPolicy for BobPolicy {
    fn select(
        &mut self,
        view: &DecisionView<'_>,
        rng: &mut ChaCha12Rng,
    ) -> Result<Chosen, PolicyError> {
        if self.current.is_none() {
            let draw = self.meta.sample(&self.params, rng);
            self.inner = Some(self.spec.build(draw.window)?);
            self.current = Some(CurrentBlock {
                draw,
                reward_sum: 0.0,
                rounds: 0,
            });
        }
        self.inner
            .as_mut()
            .expect("inner policy exists within a block")
            .select(view, rng)
    }

    fn observe(&mut self, chosen: &Chosen, obs: &Observation) -> Result<(), PolicyError> {
        self.inner
            .as_mut()
            .expect("observe follows select")
            .observe(chosen, obs)?;
        self.rounds_seen += 1;
        let block_done = {
            let block = self.current.as_mut().expect("block in progress");
            block.reward_sum += obs.total_reward();
            block.rounds += 1;
            block.rounds == self.params.block_len || self.rounds_seen == self.horizon
        };
        if block_done {
            self.close_block()
                .map_err(|_| PolicyError::BadParam("meta update without a sampled window"))?;
        }
        Ok(())
    }

    fn take_blocks(&mut self) -> Vec<BlockRecord> {
        std::mem::take(&mut self.records)
    }
}

/// Runs the full meta-algorithm on an environment and returns the trace with
/// per-block annotations attached.
pub fn bob_run(
    env: &EnvironmentInstance,
    params: BobParams,
    spec: SwUcbSpec,
    seed: u64,
) -> Result<RegretTrace, SimError> {
    let mut policy = BobPolicy::new(params, spec, env.horizon())
        .map_err(|e| SimError::PolicySetup(e.to_string()))?;
    run_episode(env, &mut policy, seed)
}
