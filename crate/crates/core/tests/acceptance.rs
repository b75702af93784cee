//! End-to-end acceptance suite. Each test prints one PASS/FAIL line (run
//! with `--nocapture` to see them); a failed criterion panics with the same
//! message.
//!
//! The heavier benchmarks replicate seeded episodes in parallel; results are
//! independent of the parallelism degree.

use std::thread::available_parallelism;

use driftbandit_core::env::{
    make_lower_bound_instance, make_piecewise_linear, make_sinusoidal, variation_budget,
    EnvironmentInstance, VariationNorm,
};
use driftbandit_core::estimate::{confidence_radius, ConfidenceConfig, WindowGramState};
use driftbandit_core::policy::{
    best_additive_action, opt_window, tuned_window, RestartedExp3Policy, Setting, SwUcbSpec,
};
use driftbandit_core::sim::{loglog_slope, replicate, replicate_detailed, SimError};
use driftbandit_core::{BanditPolicy, BobParams, BobPolicy, DecisionView, MetaExp3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

const BASE_SEED: u64 = 0xD81F_7BA0;

fn jobs() -> usize {
    available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn pass(criterion: usize, detail: String) {
    println!("acceptance criterion {criterion}: PASS — {detail}");
}

fn fail(criterion: usize, detail: String) -> ! {
    panic!("acceptance criterion {criterion}: FAIL — {detail}");
}

fn check(criterion: usize, ok: bool, detail: String) {
    if ok {
        pass(criterion, detail);
    } else {
        fail(criterion, detail);
    }
}

/// Confidence configuration derived from an environment the way the runner
/// does it: measured action/parameter bounds, delta = 1/T, lambda keeping the
/// radius at least one.
fn env_confidence(env: &EnvironmentInstance) -> ConfidenceConfig {
    ConfidenceConfig::with_defaults(
        env.noise().variance_proxy,
        env.actions().norm_bound(),
        env.path().norm_bound(),
        env.horizon(),
    )
    .expect("valid confidence configuration")
}

fn linear_policy(
    env: &EnvironmentInstance,
    window: usize,
) -> Result<Box<dyn BanditPolicy>, SimError> {
    let cfg = env_confidence(env);
    let spec = SwUcbSpec::Linear {
        dim: env.dim(),
        cfg,
    };
    Ok(Box::new(spec.build(window)?))
}

fn bob_policy(env: &EnvironmentInstance) -> Result<Box<dyn BanditPolicy>, SimError> {
    let cfg = env_confidence(env);
    let spec = SwUcbSpec::Linear {
        dim: env.dim(),
        cfg,
    };
    let params = BobParams::linear(env.dim(), env.horizon(), env.noise().variance_proxy)
        .map_err(|e| SimError::PolicySetup(e.to_string()))?;
    let policy = BobPolicy::new(params, spec, env.horizon())
        .map_err(|e| SimError::PolicySetup(e.to_string()))?;
    Ok(Box::new(policy))
}

/// Window-tuned sliding-window UCB beats the restarted adversarial baseline
/// by at least a factor of two on the drifting two-armed benchmark.
#[test]
fn criterion_1_sinusoidal_known_budget_vs_exp3s() {
    let horizon = 240_000;
    let budget = 1.0;
    let reps = 20;
    let env = make_sinusoidal(horizon, budget).unwrap();
    let cfg = env_confidence(&env);
    let w_opt = opt_window(
        env.dim(),
        horizon,
        Some(budget),
        cfg.l,
        cfg.lambda,
        cfg.s,
        cfg.r,
    )
    .unwrap()
    .window;

    let swucb = replicate(
        &env,
        |_| linear_policy(&env, w_opt),
        reps,
        BASE_SEED + 1,
        jobs(),
    )
    .unwrap();
    let exp3s = replicate(
        &env,
        |_| Ok(Box::new(RestartedExp3Policy::new(2, horizon, budget)?) as Box<dyn BanditPolicy>),
        reps,
        BASE_SEED + 1,
        jobs(),
    )
    .unwrap();

    let ratio = swucb.mean_final_regret / exp3s.mean_final_regret;
    check(
        1,
        ratio <= 0.5,
        format!(
            "window {w_opt}: tuned regret {:.1} (se {:.1}) vs restarted-EXP3 regret {:.1} (se {:.1}), ratio {ratio:.3} (need <= 0.5)",
            swucb.mean_final_regret,
            swucb.stderr_final_regret,
            exp3s.mean_final_regret,
            exp3s.stderr_final_regret
        ),
    );
}

/// Regret of the budget-tuned policy grows like T^(2/3) up to log factors.
#[test]
fn criterion_2_regret_growth_slope() {
    let reps = 20;
    let mut points = Vec::new();
    for k in 1..=8usize {
        let horizon = 30_000 * k;
        let env = make_sinusoidal(horizon, 1.0).unwrap();
        let window = tuned_window(Setting::Linear, 2, horizon, Some(1.0), None)
            .unwrap()
            .window;
        let summary = replicate(
            &env,
            |_| linear_policy(&env, window),
            reps,
            BASE_SEED + 2,
            jobs(),
        )
        .unwrap();
        points.push((horizon as f64, summary.mean_final_regret));
    }
    let fit = loglog_slope(&points).unwrap();
    check(
        2,
        (0.55..=0.80).contains(&fit.slope),
        format!(
            "log-log slope {:.4} over T = 30k..240k (need within [0.55, 0.80]); regrets {:?}",
            fit.slope,
            points.iter().map(|(_, r)| r.round()).collect::<Vec<_>>()
        ),
    );
}

/// With an unknown growing budget, the meta-tuned policy beats the
/// obliviously tuned window.
#[test]
fn criterion_3_bob_vs_oblivious_under_growing_budget() {
    let horizon = 240_000usize;
    let budget = (horizon as f64).powf(1.0 / 3.0);
    let reps = 20;
    let env = make_sinusoidal(horizon, budget).unwrap();
    let cfg = env_confidence(&env);
    let w_obl = opt_window(env.dim(), horizon, None, cfg.l, cfg.lambda, cfg.s, cfg.r)
        .unwrap()
        .window;

    let oblivious = replicate(
        &env,
        |_| linear_policy(&env, w_obl),
        reps,
        BASE_SEED + 3,
        jobs(),
    )
    .unwrap();
    let bob = replicate(&env, |_| bob_policy(&env), reps, BASE_SEED + 3, jobs()).unwrap();

    check(
        3,
        bob.mean_final_regret < oblivious.mean_final_regret,
        format!(
            "meta-tuned regret {:.1} (se {:.1}) vs oblivious window {w_obl} regret {:.1} (se {:.1})",
            bob.mean_final_regret,
            bob.stderr_final_regret,
            oblivious.mean_final_regret,
            oblivious.stderr_final_regret
        ),
    );
}

/// On the piecewise-linear two-armed instance the reward ordering is
/// tuned > meta-tuned > never-forgetting, and the never-forgetting baseline
/// pays at least 1.5x the tuned policy's regret.
#[test]
fn criterion_4_piecewise_linear_policy_ordering() {
    let horizon = 100_000;
    let reps = 50;
    let env = make_piecewise_linear(horizon, 2, 30, 0x2026_0808).unwrap();
    let measured_budget = variation_budget(env.path(), VariationNorm::Euclidean);
    let cfg = env_confidence(&env);
    let w_opt = opt_window(
        2,
        horizon,
        Some(measured_budget),
        cfg.l,
        cfg.lambda,
        cfg.s,
        cfg.r,
    )
    .unwrap()
    .window;

    let opt = replicate(
        &env,
        |_| linear_policy(&env, w_opt),
        reps,
        BASE_SEED + 4,
        jobs(),
    )
    .unwrap();
    let bob = replicate(&env, |_| bob_policy(&env), reps, BASE_SEED + 4, jobs()).unwrap();
    let ucb = replicate(
        &env,
        |_| linear_policy(&env, horizon),
        reps,
        BASE_SEED + 4,
        jobs(),
    )
    .unwrap();

    let reward_order = opt.mean_final_reward > bob.mean_final_reward
        && bob.mean_final_reward > ucb.mean_final_reward;
    let regret_gap = ucb.mean_final_regret >= 1.5 * opt.mean_final_regret;
    check(
        4,
        reward_order && regret_gap,
        format!(
            "measured budget {measured_budget:.1}, window {w_opt}; rewards tuned {:.0} / meta {:.0} / stationary {:.0}; regrets tuned {:.0} vs stationary {:.0} (need >= 1.5x)",
            opt.mean_final_reward,
            bob.mean_final_reward,
            ucb.mean_final_reward,
            opt.mean_final_regret,
            ucb.mean_final_regret
        ),
    );
}

/// The windowed ridge confidence bound covers the queried action's mean in
/// at least 93% of stationary Monte Carlo replications at delta = 0.05.
#[test]
fn criterion_5_confidence_coverage() {
    let dim = 3;
    let window = 200;
    let delta = 0.05;
    let r = 0.1;
    let reps = 1000;
    let cfg = ConfidenceConfig::new(r, 1.0, 1.0, delta, 1.0).unwrap();
    let beta = confidence_radius(&cfg, dim, window);
    let mut rng = ChaCha12Rng::seed_from_u64(BASE_SEED + 5);
    let normal = Normal::new(0.0, r).unwrap();

    let mut covered = 0usize;
    for _ in 0..reps {
        let theta = random_ball_vector(dim, &mut rng);
        let mut state = WindowGramState::new(dim, window, cfg.lambda).unwrap();
        for _ in 0..window {
            let x = random_unit_vector(dim, &mut rng);
            let y = dot(&x, &theta) + normal.sample(&mut rng);
            state.push(&x, y).unwrap();
        }
        let estimate = state.ridge_estimate().unwrap();
        let query = random_unit_vector(dim, &mut rng);
        let err = (dot(&query, &estimate) - dot(&query, &theta)).abs();
        if err <= beta * state.inverse_norm(&query).unwrap() {
            covered += 1;
        }
    }
    let coverage = covered as f64 / reps as f64;
    check(
        5,
        coverage >= 0.93,
        format!("coverage {coverage:.3} over {reps} replications (need >= 0.93), radius {beta:.3}"),
    );
}

/// Oracle equivalences: (a) windowed ridge equals batch ridge when nothing
/// was evicted; (b) the maintained inverse stays an inverse over 10^4 random
/// updates; (c) the top-m fast path agrees with subset enumeration.
#[test]
fn criterion_6_oracle_equivalences() {
    let mut rng = ChaCha12Rng::seed_from_u64(BASE_SEED + 6);

    // (a) full-window equivalence against an independent dense solve.
    let mut worst_rel = 0.0_f64;
    for _ in 0..100 {
        let dim = rng.random_range(1..=6);
        let n = rng.random_range(1..=40);
        let lambda = rng.random_range(0.5..2.0);
        let mut state = WindowGramState::new(dim, n + 5, lambda).unwrap();
        let mut obs = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let y: f64 = rng.random::<f64>() - 0.5;
            state.push(&x, y).unwrap();
            obs.push((x, y));
        }
        let got = state.ridge_estimate().unwrap();
        let want = batch_ridge_gauss(&obs, dim, lambda);
        for (g, w) in got.iter().zip(&want) {
            worst_rel = worst_rel.max((g - w).abs() / w.abs().max(1.0));
        }
    }
    if worst_rel > 1e-8 {
        fail(
            6,
            format!("batch-ridge equivalence off by {worst_rel:.2e} (> 1e-8)"),
        );
    }

    // (b) maintained inverse after 10^4 random push/evict operations.
    let mut state = WindowGramState::new(5, 37, 0.8).unwrap();
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        state.push(&x, rng.random()).unwrap();
    }
    let residual = state.inverse_residual().unwrap();
    if residual > 1e-6 {
        fail(
            6,
            format!("maintained inverse residual {residual:.2e} (> 1e-6)"),
        );
    }

    // (c) top-m fast path vs brute-force subset enumeration, d <= 12.
    for _ in 0..200 {
        let dim = rng.random_range(2..=12);
        let m = rng.random_range(1..=dim);
        let scores: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for exact in [false, true] {
            let view = DecisionView::ImplicitSubsets { dim, m, exact };
            let fast = best_additive_action(&scores, &view).unwrap();
            let brute = brute_force_subset(&scores, dim, m, exact);
            if fast.action != brute {
                fail(
                    6,
                    format!(
                        "top-m mismatch: d={dim} m={m} exact={exact} fast {:?} vs brute {:?}",
                        fast.action, brute
                    ),
                );
            }
        }
    }
    pass(
        6,
        format!("batch-ridge rel err {worst_rel:.2e}; inverse residual {residual:.2e}; 400 top-m argmax agreements"),
    );
}

/// The meta layer's derived parameters match the independently computed
/// values exactly (block length, ladder) and to high precision (normalizer,
/// mixing rate).
#[test]
fn criterion_7_bob_parameter_fidelity() {
    let params = BobParams::linear(2, 100_000, 0.1).unwrap();
    let meta = MetaExp3::new(&params, 100_000);
    let q_expect = 1292.9504952505087;
    let gamma_expect = 0.24675876647631184;
    let ok = params.block_len == 632
        && params.delta == 7
        && params.windows() == vec![1, 2, 6, 15, 39, 100, 251, 632]
        && ((params.normalizer - q_expect) / q_expect).abs() <= 1e-6
        && (meta.gamma() - gamma_expect).abs() <= 1e-9;
    check(
        7,
        ok,
        format!(
            "H={} Delta={} J={:?} Q={:.10} gamma={:.12}",
            params.block_len,
            params.delta,
            params.windows(),
            params.normalizer,
            meta.gamma()
        ),
    );
}

/// Block rewards stay inside the normalizer's [0, 1] range in effectively
/// every block.
#[test]
fn criterion_8_block_reward_normalization() {
    let horizon = 100_000;
    let reps = 50;
    let env = make_sinusoidal(horizon, 1.0).unwrap();
    let (_, outputs) = replicate_detailed(
        &env,
        |_| bob_policy(&env),
        reps,
        BASE_SEED + 8,
        jobs(),
        None,
    )
    .unwrap();
    let mut blocks = 0usize;
    let mut outside = 0usize;
    for out in &outputs {
        for b in &out.blocks {
            blocks += 1;
            if !(0.0..=1.0).contains(&b.raw_normalized) {
                outside += 1;
            }
        }
    }
    let fraction = outside as f64 / blocks as f64;
    check(
        8,
        fraction <= 0.01,
        format!("{outside} of {blocks} blocks left [0,1] before clamping (fraction {fraction:.5}, need <= 0.01)"),
    );
}

/// Generator properties over parameter grids: the sinusoidal instance's
/// variation against its stated sqrt(2)*B bound, piecewise-linear norm
/// bounds, and the blockwise instance's variation budget.
#[test]
fn criterion_9_generator_properties() {
    let mut failures: Vec<String> = Vec::new();

    // Piecewise-linear: every parameter vector stays in the unit ball.
    let mut checked = 0usize;
    for (horizon, dim, breaks, seed) in [
        (1_000, 2, 10, 1u64),
        (10_000, 2, 30, 2),
        (50_000, 5, 30, 3),
        (5_000, 3, 100, 4),
    ] {
        let env = make_piecewise_linear(horizon, dim, breaks, seed).unwrap();
        for t in 0..horizon {
            let norm = dot(env.path().theta(t), env.path().theta(t)).sqrt();
            if norm > 1.0 + 1e-12 {
                failures.push(format!(
                    "piecewise norm {norm} at round {t} (T={horizon}, d={dim})"
                ));
                break;
            }
            checked += 1;
        }
    }
    println!("  criterion 9 piecewise-linear: {checked} parameter vectors within the unit ball");

    // Blockwise stress instance: measured variation within the budget.
    for (horizon, dim, budget, seed) in [
        (10_000, 2, 1.0, 5u64),
        (50_000, 2, 4.0, 6),
        (20_000, 3, 2.0, 7),
        (10_000, 1, 0.5, 8),
    ] {
        let env = make_lower_bound_instance(horizon, dim, budget, seed).unwrap();
        let var = variation_budget(env.path(), VariationNorm::Euclidean);
        if var > budget + 1e-12 {
            failures.push(format!(
                "blockwise variation {var:.4} exceeds budget {budget} (T={horizon}, d={dim})"
            ));
        } else {
            println!(
                "  criterion 9 blockwise T={horizon} d={dim}: variation {var:.4} <= budget {budget}"
            );
        }
    }

    // Sinusoidal: stated bound sqrt(2) * B over a (T, B) grid.
    for horizon in [1_000usize, 5_000, 20_000] {
        for budget in [0.5, 1.0, 2.0, 5.0] {
            let env = make_sinusoidal(horizon, budget).unwrap();
            let var = variation_budget(env.path(), VariationNorm::Euclidean);
            let bound = std::f64::consts::SQRT_2 * budget;
            if var > bound + 1e-12 {
                failures.push(format!(
                    "sinusoidal variation {var:.4} exceeds sqrt(2)*B = {bound:.4} at T={horizon}, B={budget} (ratio to B: {:.3})",
                    var / budget
                ));
            }
        }
    }

    check(
        9,
        failures.is_empty(),
        if failures.is_empty() {
            "all generator bounds hold".to_string()
        } else {
            format!("{} violations; first: {}", failures.len(), failures[0])
        },
    );
}

// ---------------------------------------------------------------------------
// Independent oracles for criterion 6
// ---------------------------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit_vector(dim: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_ball_vector(dim: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let direction = random_unit_vector(dim, rng);
    let radius = rng.random::<f64>().powf(1.0 / dim as f64);
    direction.into_iter().map(|x| x * radius).collect()
}

/// Dense batch ridge via partial-pivot Gaussian elimination; shares no code
/// with the windowed estimator.
#[allow(clippy::needless_range_loop)]
fn batch_ridge_gauss(obs: &[(Vec<f64>, f64)], dim: usize, lambda: f64) -> Vec<f64> {
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = lambda;
    }
    for (x, y) in obs {
        for i in 0..dim {
            for j in 0..dim {
                a[i][j] += x[i] * x[j];
            }
            b[i] += x[i] * y;
        }
    }
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for row in col + 1..dim {
            let f = a[row][col] / p;
            for k in col..dim {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut v = b[row];
        for k in row + 1..dim {
            v -= a[row][k] * x[k];
        }
        x[row] = v / a[row][row];
    }
    x
}

/// Exhaustive subset argmax with the same tie-break (score desc, index asc)
/// realized by enumerating masks in an order that prefers lower indices.
fn brute_force_subset(scores: &[f64], dim: usize, m: usize, exact: bool) -> Vec<f64> {
    let mut best_mask = 0u32;
    let mut best_value = f64::NEG_INFINITY;
    for mask in 1u32..(1 << dim) {
        let ones = mask.count_ones() as usize;
        let feasible = if exact { ones == m } else { ones <= m };
        if !feasible {
            continue;
        }
        let value: f64 = (0..dim)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| scores[i])
            .sum();
        if value > best_value {
            best_value = value;
            best_mask = mask;
        }
    }
    (0..dim)
        .map(|i| if best_mask & (1 << i) != 0 { 1.0 } else { 0.0 })
        .collect()
}
