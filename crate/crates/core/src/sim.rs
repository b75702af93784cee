//! Episode execution with dynamic-regret accounting against the per-round
//! oracle, seeded replication with order-independent aggregation, and the
//! log-log growth-rate fit used to read off regret slopes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bob::BlockRecord;
use crate::env::{DecisionView, EnvError, EnvironmentInstance};
use crate::estimate::logistic;
use crate::mat::dot;
use crate::policy::{best_additive_action, BanditPolicy, PolicyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("policy construction failed: {0}")]
    PolicySetup(String),
    #[error("slope fit needs at least {needed} usable points, found {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("replication count must be at least 1")]
    NoReplications,
}

/// Per-round account of one episode: oracle mean value, chosen mean value,
/// instantaneous and cumulative regret, plus realized-reward and per-block
/// annotations.
#[derive(Clone, Debug, Default)]
pub struct RegretTrace {
    pub oracle_means: Vec<f64>,
    pub chosen_means: Vec<f64>,
    pub inst_regret: Vec<f64>,
    pub cum_regret: Vec<f64>,
    /// Total noisy reward actually collected.
    pub realized_reward: f64,
    /// Rounds where the observation was clipped into its reward range.
    pub clip_events: u64,
    /// Per-block meta-layer diagnostics (empty unless the policy has blocks).
    pub blocks: Vec<BlockRecord>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.inst_regret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inst_regret.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    /// `(round, inst_regret, cum_regret)` every `every` rounds (1-based
    /// rounds; the final round is always included).
    pub fn downsampled(&self, every: usize) -> Vec<(usize, f64, f64)> {
        let every = every.max(1);
        let n = self.len();
        let mut out = Vec::with_capacity(n / every + 1);
        for t in (0..n).step_by(every) {
            out.push((t + 1, self.inst_regret[t], self.cum_regret[t]));
        }
        if n > 0 && !(n - 1).is_multiple_of(every) {
            out.push((n, self.inst_regret[n - 1], self.cum_regret[n - 1]));
        }
        out
    }
}

/// Exact per-round oracle: the mean-value maximizer over the decision set.
/// Finite sets are enumerated; implicit subset families use the top-m path.
/// For strictly increasing links the linear argmax is the link argmax.
pub fn oracle_value(env: &EnvironmentInstance, t: usize) -> Result<(f64, Vec<f64>), SimError> {
    let theta = env.path().theta(t);
    let view = env.decisions_at(t);
    let action = match view {
        DecisionView::Explicit(actions) => {
            if actions.is_empty() {
                return Err(SimError::Policy(PolicyError::EmptyDecisionSet));
            }
            let mut best = 0usize;
            let mut best_z = f64::NEG_INFINITY;
            for (i, a) in actions.iter().enumerate() {
                let z = dot(a, theta);
                if z > best_z {
                    best_z = z;
                    best = i;
                }
            }
            actions[best].clone()
        }
        DecisionView::ImplicitSubsets { .. } => best_additive_action(theta, &view)?.action,
    };
    Ok((env.mean_value(t, &action), action))
}

/// Runs one full interaction loop: select, draw the reward, update, account
/// regret. Deterministic given the seed.
pub fn run_episode(
    env: &EnvironmentInstance,
    policy: &mut dyn BanditPolicy,
    seed: u64,
) -> Result<RegretTrace, SimError> {
    let horizon = env.horizon();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut trace = RegretTrace {
        oracle_means: Vec::with_capacity(horizon),
        chosen_means: Vec::with_capacity(horizon),
        inst_regret: Vec::with_capacity(horizon),
        cum_regret: Vec::with_capacity(horizon),
        ..RegretTrace::default()
    };
    let mut cum = 0.0;
    for t in 0..horizon {
        let view = env.decisions_at(t);
        let chosen = policy.select(&view, &mut rng)?;
        let obs = env.sample_reward(t, &chosen.action, &mut rng)?;
        policy.observe(&chosen, &obs)?;

        let (oracle, _) = oracle_value(env, t)?;
        let mean = env.mean_value(t, &chosen.action);
        let inst = (oracle - mean).max(0.0);
        debug_assert!(oracle - mean > -1e-9, "oracle fell below a feasible action");
        cum += inst;
        trace.oracle_means.push(oracle);
        trace.chosen_means.push(mean);
        trace.inst_regret.push(inst);
        trace.cum_regret.push(cum);
        trace.realized_reward += obs.total_reward();
        trace.clip_events += obs.clipped() as u64;
    }
    trace.blocks = policy.take_blocks();
    Ok(trace)
}

/// Aggregate of one (policy, environment) cell over seeded replications.
#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub replications: usize,
    pub mean_final_regret: f64,
    /// Sample standard error of the final regret (0 for a single run).
    pub stderr_final_regret: f64,
    pub mean_final_reward: f64,
    pub clip_events: u64,
    pub wall_ms: u128,
}

/// Everything worth keeping from one replication once the full trace is
/// dropped.
#[derive(Clone, Debug)]
pub struct ReplicationOutput {
    pub rep: usize,
    pub final_regret: f64,
    pub final_reward: f64,
    pub clip_events: u64,
    pub blocks: Vec<BlockRecord>,
    /// Downsampled `(round, inst_regret, cum_regret)` rows, when requested.
    pub sampled: Vec<(usize, f64, f64)>,
}

/// Runs `n_reps` seeded replications (replication `r` uses
/// `base_seed + r`) and aggregates final regrets. The summary does not
/// depend on the parallelism degree: replication results are reduced in
/// replication order.
pub fn replicate<F>(
    env: &EnvironmentInstance,
    make_policy: F,
    n_reps: usize,
    base_seed: u64,
    parallelism: usize,
) -> Result<ExperimentSummary, SimError>
where
    F: Fn(usize) -> Result<Box<dyn BanditPolicy>, SimError> + Sync,
{
    replicate_detailed(env, make_policy, n_reps, base_seed, parallelism, None).map(|(s, _)| s)
}

/// As [`replicate`], additionally returning per-replication outputs with
/// optional downsampled traces (`trace_every` rounds apart).
pub fn replicate_detailed<F>(
    env: &EnvironmentInstance,
    make_policy: F,
    n_reps: usize,
    base_seed: u64,
    parallelism: usize,
    trace_every: Option<usize>,
) -> Result<(ExperimentSummary, Vec<ReplicationOutput>), SimError>
where
    F: Fn(usize) -> Result<Box<dyn BanditPolicy>, SimError> + Sync,
{
    if n_reps == 0 {
        return Err(SimError::NoReplications);
    }
    let started = Instant::now();
    let run_one = |rep: usize| -> Result<ReplicationOutput, SimError> {
        let mut policy = make_policy(rep)?;
        let trace = run_episode(env, policy.as_mut(), base_seed.wrapping_add(rep as u64))?;
        Ok(ReplicationOutput {
            rep,
            final_regret: trace.final_regret(),
            final_reward: trace.realized_reward,
            clip_events: trace.clip_events,
            sampled: trace_every
                .map(|k| trace.downsampled(k))
                .unwrap_or_default(),
            blocks: trace.blocks,
        })
    };

    let outputs: Vec<ReplicationOutput> = if parallelism <= 1 {
        (0..n_reps).map(run_one).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| SimError::PolicySetup(e.to_string()))?;
        pool.install(|| {
            (0..n_reps)
                .into_par_iter()
                .map(run_one)
                .collect::<Result<_, _>>()
        })?
    };

    let n = n_reps as f64;
    let mean_regret = outputs.iter().map(|o| o.final_regret).sum::<f64>() / n;
    let stderr = if n_reps >= 2 {
        let var = outputs
            .iter()
            .map(|o| (o.final_regret - mean_regret).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let mean_reward = outputs.iter().map(|o| o.final_reward).sum::<f64>() / n;
    let clip_events = outputs.iter().map(|o| o.clip_events).sum();
    let summary = ExperimentSummary {
        replications: n_reps,
        mean_final_regret: mean_regret,
        stderr_final_regret: stderr,
        mean_final_reward: mean_reward,
        clip_events,
        wall_ms: started.elapsed().as_millis(),
    };
    Ok((summary, outputs))
}

/// Ordinary-least-squares fit of `ln(regret)` against `ln(horizon)`.
#[derive(Clone, Copy, Debug)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// Points dropped because their regret was not positive.
    pub excluded: usize,
}

/// Growth-rate fit over a `(horizon, mean regret)` grid. Nonpositive regrets
/// cannot enter the log fit and are excluded (and counted).
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit, SimError> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, r)| *t > 0.0 && *r > 0.0)
        .map(|&(t, r)| (t.ln(), r.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(SimError::TooFewPoints {
            needed: 3,
            got: usable.len(),
        });
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &usable {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: mean_y - slope * mean_x,
        points_used: usable.len(),
        excluded: points.len() - usable.len(),
    })
}

/// Convenience: the logistic link shared with environment mean values.
pub fn glm_mean(z: f64) -> f64 {
    logistic(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        ActionSet, ActionSpace, CombinatorialFamily, EnvironmentInstance, NoiseModel,
        ParameterPath, RewardKind,
    };
    use crate::estimate::ConfidenceConfig;
    use crate::policy::SwUcbSpec;
    use rand::{Rng, SeedableRng};

    fn stationary_two_armed(horizon: usize, means: [f64; 2], r: f64) -> EnvironmentInstance {
        let path = ParameterPath::with_measured_bound(vec![means.to_vec(); horizon]).unwrap();
        let actions = ActionSet::new(2, ActionSpace::StandardBasis).unwrap();
        EnvironmentInstance::new(path, actions, NoiseModel::gaussian(r), RewardKind::Linear)
            .unwrap()
    }

    #[test]
    fn oracle_picks_best_arm() {
        let env = stationary_two_armed(3, [0.8, 0.2], 0.1);
        let (value, action) = oracle_value(&env, 0).unwrap();
        assert_eq!(value, 0.8);
        assert_eq!(action, vec![1.0, 0.0]);
    }

    #[test]
    fn oracle_semi_bandit_matches_brute_force() {
        let theta = vec![0.9, 0.1, 0.5, 0.4];
        let path = ParameterPath::with_measured_bound(vec![theta.clone(); 2]).unwrap();
        let actions = ActionSet::new(
            4,
            ActionSpace::Combinatorial(CombinatorialFamily::SubsetsExactly { m: 2 }),
        )
        .unwrap();
        let env = EnvironmentInstance::new(
            path,
            actions,
            NoiseModel::bernoulli_items(),
            RewardKind::SemiBandit,
        )
        .unwrap();
        let (value, action) = oracle_value(&env, 0).unwrap();
        assert_eq!(action, vec![1.0, 0.0, 1.0, 0.0]);
        assert!((value - 1.4).abs() < 1e-15);

        // Brute force over all size-2 subsets.
        let mut best = f64::NEG_INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                best = best.max(theta[i] + theta[j]);
            }
        }
        assert!((value - best).abs() < 1e-15);
    }

    #[test]
    fn glm_oracle_argmax_is_linear_argmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let dim = rng.random_range(2..=4);
            let n_actions = rng.random_range(2..=6);
            let actions_list: Vec<Vec<f64>> = (0..n_actions)
                .map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect();
            let theta: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let path = ParameterPath::with_measured_bound(vec![theta.clone()]).unwrap();
            let actions = ActionSet::new(dim, ActionSpace::Fixed(actions_list.clone())).unwrap();
            let env = EnvironmentInstance::new(
                path,
                actions,
                NoiseModel::gaussian(0.0),
                RewardKind::GlmLogistic,
            )
            .unwrap();
            let (value, action) = oracle_value(&env, 0).unwrap();
            let linear_best = actions_list
                .iter()
                .map(|a| dot(a, &theta))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(value, glm_mean(linear_best));
            assert_eq!(dot(&action, &theta), linear_best);
        }
    }

    fn d_armed_policy(horizon: usize, r: f64) -> Box<dyn BanditPolicy> {
        Box::new(
            SwUcbSpec::DArmed { dim: 2, r, horizon }
                .build(horizon)
                .unwrap(),
        )
    }

    #[test]
    fn noiseless_greedy_has_zero_regret_after_first_sweep() {
        let env = stationary_two_armed(50, [0.7, 0.3], 0.0);
        let mut policy = d_armed_policy(50, 0.0);
        let trace = run_episode(&env, policy.as_mut(), 3).unwrap();
        // Each arm gets sampled once (unvisited arms dominate), then the
        // exact means take over.
        assert!(trace.cum_regret[1] > 0.0);
        assert_eq!(trace.final_regret(), trace.cum_regret[1]);
        assert_eq!(trace.inst_regret[10], 0.0);
    }

    #[test]
    fn traces_are_seed_reproducible() {
        let env = stationary_two_armed(200, [0.6, 0.4], 0.1);
        let cfg = ConfidenceConfig::with_defaults(0.1, 1.0, 1.0, 200).unwrap();
        let spec = SwUcbSpec::Linear { dim: 2, cfg };
        let run = |seed: u64| {
            let mut policy = spec.build(50).unwrap();
            run_episode(&env, &mut policy, seed).unwrap()
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(a.cum_regret, b.cum_regret);
        assert_eq!(a.realized_reward, b.realized_reward);
        let c = run(10);
        assert_ne!(a.realized_reward, c.realized_reward);
    }

    #[test]
    fn regret_is_nonnegative_prefix_sum_and_bounded() {
        let env = crate::env::make_sinusoidal(500, 1.0).unwrap();
        let cfg = ConfidenceConfig::with_defaults(0.1, 1.0, 1.0, 500).unwrap();
        let mut policy = SwUcbSpec::Linear { dim: 2, cfg }.build(40).unwrap();
        let trace = run_episode(&env, &mut policy, 1).unwrap();
        let mut cum = 0.0;
        for (i, r) in trace.inst_regret.iter().enumerate() {
            assert!(*r >= 0.0);
            cum += r;
            assert!((trace.cum_regret[i] - cum).abs() < 1e-12);
        }
        assert!(trace.final_regret() <= 2.0 * 500.0 * env.value_bound());
    }

    #[test]
    fn replicate_single_rep_matches_trace() {
        let env = stationary_two_armed(100, [0.6, 0.4], 0.1);
        let horizon = 100;
        let make = |_: usize| Ok(d_armed_policy(horizon, 0.1));
        let summary = replicate(&env, make, 1, 77, 1).unwrap();
        let mut policy = d_armed_policy(horizon, 0.1);
        let trace = run_episode(&env, policy.as_mut(), 77).unwrap();
        assert_eq!(summary.mean_final_regret, trace.final_regret());
        assert_eq!(summary.stderr_final_regret, 0.0);
    }

    #[test]
    fn replication_summary_independent_of_parallelism() {
        let env = stationary_two_armed(150, [0.55, 0.45], 0.1);
        let make = |_: usize| Ok(d_armed_policy(150, 0.1));
        let seq = replicate(&env, make, 8, 11, 1).unwrap();
        let par = replicate(&env, make, 8, 11, 8).unwrap();
        assert_eq!(seq.mean_final_regret, par.mean_final_regret);
        assert_eq!(seq.stderr_final_regret, par.stderr_final_regret);
        assert_eq!(seq.mean_final_reward, par.mean_final_reward);
    }

    #[test]
    fn zero_noise_stationary_runs_have_zero_stderr() {
        let env = stationary_two_armed(80, [0.9, 0.1], 0.0);
        let make = |_: usize| Ok(d_armed_policy(80, 0.0));
        let summary = replicate(&env, make, 50, 5, 2).unwrap();
        // Identical replications; only float summation dust may remain.
        assert!(summary.stderr_final_regret < 1e-12);
    }

    #[test]
    fn downsampling_keeps_final_round() {
        let env = stationary_two_armed(103, [0.6, 0.4], 0.1);
        let mut policy = d_armed_policy(103, 0.1);
        let trace = run_episode(&env, policy.as_mut(), 0).unwrap();
        let rows = trace.downsampled(10);
        assert_eq!(rows.first().unwrap().0, 1);
        assert_eq!(rows.last().unwrap().0, 103);
        assert_eq!(rows.last().unwrap().2, trace.final_regret());
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let grid: Vec<f64> = vec![1e3, 2e3, 5e3, 1e4, 1e5];
        let pow =
            |p: f64| -> Vec<(f64, f64)> { grid.iter().map(|&t| (t, 3.7 * t.powf(p))).collect() };
        assert!((loglog_slope(&pow(2.0 / 3.0)).unwrap().slope - 2.0 / 3.0).abs() < 1e-10);
        assert!((loglog_slope(&pow(1.0)).unwrap().slope - 1.0).abs() < 1e-10);
        let constant: Vec<(f64, f64)> = grid.iter().map(|&t| (t, 42.0)).collect();
        assert!(loglog_slope(&constant).unwrap().slope.abs() < 1e-10);
    }

    #[test]
    fn slope_excludes_nonpositive_points() {
        let points = vec![
            (1e3, 10.0),
            (2e3, -1.0),
            (4e3, 40.0),
            (8e3, 80.0),
            (1.6e4, 0.0),
        ];
        let fit = loglog_slope(&points).unwrap();
        assert_eq!(fit.points_used, 3);
        assert_eq!(fit.excluded, 2);
        assert!((fit.slope - 1.0).abs() < 1e-9);
        let too_few = vec![(1e3, 1.0), (2e3, -5.0), (3e3, -5.0)];
        assert!(matches!(
            loglog_slope(&too_few),
            Err(SimError::TooFewPoints { .. })
        ));
    }
}
