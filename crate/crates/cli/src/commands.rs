//! Subcommand implementations: instance generation, the policy/environment
//! sweep runner, and slope fitting over summary files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use driftbandit_core::env::{
    load_replay_csv, make_lower_bound_instance, make_piecewise_linear,
    make_piecewise_linear_with_actions, make_sinusoidal, variation_budget, write_actions_csv,
    write_path_csv, EnvironmentInstance, VariationNorm,
};
use driftbandit_core::estimate::ConfidenceConfig;
use driftbandit_core::policy::{
    opt_window, tuned_window, Exp3Policy, Exp3SPolicy, RestartedExp3Policy, Setting, SwUcbSpec,
};
use driftbandit_core::sim::{loglog_slope, replicate_detailed, SimError};
use driftbandit_core::{BanditPolicy, BobParams, BobPolicy};

use crate::config::{EnvSpec, ExperimentConfig, PolicyChoice, PolicySetting, Tuning};

/// Errors split by exit code: configuration problems exit 1, everything that
/// goes wrong while executing exits 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

fn runtime(err: impl fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

/// One sweep point: horizon, the budget knob, and the built instance.
struct SweepPoint {
    horizon: usize,
    /// Budget recorded in reports and handed to budget-aware tunings.
    budget: f64,
    env: EnvironmentInstance,
    /// Infinity-norm measured variation, for d-armed tunings on instances
    /// without a nominal budget.
    budget_inf: f64,
    nominal: bool,
}

fn build_sweep(config: &ExperimentConfig) -> Result<Vec<SweepPoint>, CliError> {
    let mut points = Vec::new();
    match &config.environment {
        EnvSpec::Replay {
            path_csv,
            actions_csv,
        } => {
            let env = load_replay_csv(path_csv, actions_csv).map_err(runtime)?;
            let budget = variation_budget(env.path(), VariationNorm::Euclidean);
            let budget_inf = variation_budget(env.path(), VariationNorm::Infinity);
            points.push(SweepPoint {
                horizon: env.horizon(),
                budget,
                env,
                budget_inf,
                nominal: false,
            });
        }
        spec => {
            for (i, &horizon) in config.t_grid.iter().enumerate() {
                let b = config.b_t_rule.value(i, horizon);
                let (env, nominal) = match spec {
                    EnvSpec::Sinusoidal => (make_sinusoidal(horizon, b).map_err(runtime)?, true),
                    EnvSpec::PiecewiseLinear {
                        dim,
                        n_breaks,
                        seed,
                        n_actions,
                    } => {
                        let env = match n_actions {
                            Some(k) => make_piecewise_linear_with_actions(
                                horizon, *dim, *n_breaks, *k, *seed,
                            ),
                            None => make_piecewise_linear(horizon, *dim, *n_breaks, *seed),
                        }
                        .map_err(runtime)?;
                        (env, false)
                    }
                    EnvSpec::LowerBound { dim, seed } => (
                        make_lower_bound_instance(horizon, *dim, b, *seed).map_err(runtime)?,
                        true,
                    ),
                    EnvSpec::Replay { .. } => unreachable!(),
                };
                let budget = if nominal {
                    b
                } else {
                    variation_budget(env.path(), VariationNorm::Euclidean)
                };
                let budget_inf = variation_budget(env.path(), VariationNorm::Infinity);
                points.push(SweepPoint {
                    horizon,
                    budget,
                    env,
                    budget_inf,
                    nominal,
                });
            }
        }
    }
    Ok(points)
}

fn env_confidence(env: &EnvironmentInstance) -> Result<ConfidenceConfig, CliError> {
    ConfidenceConfig::with_defaults(
        env.noise().variance_proxy,
        env.actions().norm_bound(),
        env.path().norm_bound(),
        env.horizon(),
    )
    .map_err(runtime)
}

fn arm_count(env: &EnvironmentInstance) -> Result<usize, CliError> {
    if env.actions().per_round_len().is_some() {
        return Err(CliError::Runtime(
            "this policy needs a time-invariant decision set".into(),
        ));
    }
    match env.decisions_at(0) {
        driftbandit_core::DecisionView::Explicit(actions) => Ok(actions.len()),
        _ => Err(CliError::Runtime(
            "this policy needs a finite decision set".into(),
        )),
    }
}

fn window_for(
    tuning: &Tuning,
    setting: PolicySetting,
    point: &SweepPoint,
    cfg: &ConfidenceConfig,
) -> Result<usize, CliError> {
    let dim = point.env.dim();
    let horizon = point.horizon;
    // Budget-aware rules get the nominal knob when the instance has one and
    // the measured variation (in the setting's norm) otherwise.
    let budget = match setting {
        PolicySetting::Linear => point.budget,
        PolicySetting::DArmed if point.nominal => point.budget,
        PolicySetting::DArmed => point.budget_inf,
    };
    let choice = match (tuning, setting) {
        (Tuning::Fixed(w), _) => return Ok((*w).clamp(1, horizon.max(1))),
        (Tuning::Opt, _) => opt_window(dim, horizon, Some(budget), cfg.l, cfg.lambda, cfg.s, cfg.r),
        (Tuning::OptOblivious, _) => {
            opt_window(dim, horizon, None, cfg.l, cfg.lambda, cfg.s, cfg.r)
        }
        (Tuning::Tuned, PolicySetting::Linear) => {
            tuned_window(Setting::Linear, dim, horizon, Some(budget), None)
        }
        (Tuning::Tuned, PolicySetting::DArmed) => {
            tuned_window(Setting::DArmed, dim, horizon, Some(budget), None)
        }
        (Tuning::Oblivious, PolicySetting::Linear) => {
            tuned_window(Setting::Linear, dim, horizon, None, None)
        }
        (Tuning::Oblivious, PolicySetting::DArmed) => {
            tuned_window(Setting::DArmed, dim, horizon, None, None)
        }
    };
    Ok(choice.map_err(runtime)?.window)
}

fn sw_spec(setting: PolicySetting, env: &EnvironmentInstance) -> Result<SwUcbSpec, CliError> {
    let cfg = env_confidence(env)?;
    Ok(match setting {
        PolicySetting::Linear => SwUcbSpec::Linear {
            dim: env.dim(),
            cfg,
        },
        PolicySetting::DArmed => SwUcbSpec::DArmed {
            dim: env.dim(),
            r: env.noise().variance_proxy,
            horizon: env.horizon(),
        },
    })
}

fn build_policy(
    choice: &PolicyChoice,
    point: &SweepPoint,
) -> Result<Box<dyn BanditPolicy>, SimError> {
    let env = &point.env;
    let to_sim = |e: CliError| SimError::PolicySetup(e.to_string());
    match choice {
        PolicyChoice::SwUcb { tuning, setting } => {
            let cfg = env_confidence(env).map_err(to_sim)?;
            let window = window_for(tuning, *setting, point, &cfg).map_err(to_sim)?;
            let spec = sw_spec(*setting, env).map_err(to_sim)?;
            Ok(Box::new(spec.build(window)?))
        }
        PolicyChoice::Ucb { setting } => {
            let spec = sw_spec(*setting, env).map_err(to_sim)?;
            Ok(Box::new(spec.build(env.horizon().max(1))?))
        }
        PolicyChoice::Bob { setting } => {
            let r = env.noise().variance_proxy;
            let nu = env.value_bound().max(1.0);
            let params = match setting {
                PolicySetting::Linear => {
                    BobParams::linear_with_bound(env.dim(), env.horizon(), r, nu)
                }
                PolicySetting::DArmed => {
                    BobParams::d_armed_with_bound(env.dim(), env.horizon(), r, nu)
                }
            }
            .map_err(|e| SimError::PolicySetup(e.to_string()))?;
            let spec = sw_spec(*setting, env).map_err(to_sim)?;
            let policy = BobPolicy::new(params, spec, env.horizon())
                .map_err(|e| SimError::PolicySetup(e.to_string()))?;
            Ok(Box::new(policy))
        }
        PolicyChoice::Exp3 => {
            let arms = arm_count(env).map_err(to_sim)?;
            Ok(Box::new(Exp3Policy::new(arms, env.horizon())?))
        }
        PolicyChoice::Exp3s => {
            let arms = arm_count(env).map_err(to_sim)?;
            Ok(Box::new(RestartedExp3Policy::new(
                arms,
                env.horizon(),
                point.budget,
            )?))
        }
        PolicyChoice::Exp3sShare => {
            let arms = arm_count(env).map_err(to_sim)?;
            Ok(Box::new(Exp3SPolicy::new(
                arms,
                env.horizon(),
                point.budget,
            )?))
        }
    }
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create output dir {}: {e}", dir.display())))
}

/// Materializes the configured environments to path/action CSV files.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<(), CliError> {
    create_out_dir(&config.output_dir)?;
    let points = build_sweep(config)?;
    for point in &points {
        let t = point.horizon;
        let path_file = config.output_dir.join(format!("path_T{t}.csv"));
        let mut out = BufWriter::new(File::create(&path_file).map_err(runtime)?);
        write_path_csv(point.env.path(), &mut out).map_err(runtime)?;
        out.flush().map_err(runtime)?;

        let actions_file = config.output_dir.join(format!("actions_T{t}.csv"));
        let mut out = BufWriter::new(File::create(&actions_file).map_err(runtime)?);
        write_actions_csv(point.env.actions(), &mut out).map_err(runtime)?;
        out.flush().map_err(runtime)?;
        println!(
            "wrote {} and {}",
            path_file.display(),
            actions_file.display()
        );
    }
    Ok(())
}

/// Runs the sweep and writes `summary.csv`, optional per-round trace files,
/// and per-block files for meta-policy runs.
pub fn cmd_run(config: &ExperimentConfig) -> Result<(), CliError> {
    create_out_dir(&config.output_dir)?;
    let points = build_sweep(config)?;
    let jobs = config.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });

    let summary_path = config.output_dir.join("summary.csv");
    let mut summary = BufWriter::new(File::create(&summary_path).map_err(runtime)?);
    writeln!(
        summary,
        "policy,setting,T,B_T,reps,mean_final_regret,stderr_final_regret,wall_ms"
    )
    .map_err(runtime)?;

    for point in &points {
        let mut trace_out: Option<BufWriter<File>> = match config.trace_every {
            Some(_) => {
                let path = config
                    .output_dir
                    .join(format!("trace_T{}.csv", point.horizon));
                let mut out = BufWriter::new(File::create(path).map_err(runtime)?);
                writeln!(out, "policy,rep,t,inst_regret,cum_regret").map_err(runtime)?;
                Some(out)
            }
            None => None,
        };
        for choice in &config.policies {
            let name = choice.name();
            let (stats, outputs) = replicate_detailed(
                &point.env,
                |_| build_policy(choice, point),
                config.replications,
                config.base_seed,
                jobs,
                config.trace_every,
            )
            .map_err(runtime)?;
            writeln!(
                summary,
                "{name},{},{},{},{},{},{},{}",
                setting_label(choice),
                point.horizon,
                point.budget,
                stats.replications,
                stats.mean_final_regret,
                stats.stderr_final_regret,
                stats.wall_ms
            )
            .map_err(runtime)?;
            println!(
                "{name} @ T={}: mean regret {:.2} (se {:.2}), mean reward {:.2}, {} reps in {} ms",
                point.horizon,
                stats.mean_final_regret,
                stats.stderr_final_regret,
                stats.mean_final_reward,
                stats.replications,
                stats.wall_ms
            );
            if stats.clip_events > 0 {
                eprintln!(
                    "note: {} reward observations were clipped into range across replications",
                    stats.clip_events
                );
            }

            if let Some(out) = trace_out.as_mut() {
                for rep_out in &outputs {
                    for (t, inst, cum) in &rep_out.sampled {
                        writeln!(out, "{name},{},{t},{inst},{cum}", rep_out.rep)
                            .map_err(runtime)?;
                    }
                }
            }
            if outputs.iter().any(|o| !o.blocks.is_empty()) {
                let path = config
                    .output_dir
                    .join(format!("blocks_{name}_T{}.csv", point.horizon));
                let mut out = BufWriter::new(File::create(path).map_err(runtime)?);
                writeln!(out, "rep,block,j,window,norm_reward,clamped").map_err(runtime)?;
                for rep_out in &outputs {
                    for b in &rep_out.blocks {
                        writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            rep_out.rep,
                            b.block,
                            b.exponent,
                            b.window,
                            b.raw_normalized,
                            u8::from(b.clamped)
                        )
                        .map_err(runtime)?;
                    }
                }
                out.flush().map_err(runtime)?;
            }
        }
        if let Some(mut out) = trace_out {
            out.flush().map_err(runtime)?;
        }
    }
    summary.flush().map_err(runtime)?;
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn setting_label(choice: &PolicyChoice) -> &'static str {
    match choice.setting() {
        PolicySetting::Linear => "linear",
        PolicySetting::DArmed => "d-armed",
    }
}

/// Fits the regret-growth slope per policy from a summary file.
pub fn cmd_slope(
    summary_path: &Path,
    policy_filter: Option<&str>,
    out: Option<&PathBuf>,
) -> Result<(), CliError> {
    let text = fs::read_to_string(summary_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", summary_path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Runtime("summary file is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let idx = |name: &str| -> Result<usize, CliError> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| CliError::Runtime(format!("summary header misses column {name}")))
    };
    let (p_i, t_i, r_i) = (idx("policy")?, idx("T")?, idx("mean_final_regret")?);

    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(CliError::Runtime(format!(
                "summary row {}: expected {} columns, found {}",
                row + 2,
                cols.len(),
                cells.len()
            )));
        }
        let policy = cells[p_i].to_string();
        if policy_filter.is_some_and(|f| f != policy) {
            continue;
        }
        let t: f64 = cells[t_i]
            .parse()
            .map_err(|_| CliError::Runtime(format!("summary row {}: bad T value", row + 2)))?;
        let regret: f64 = cells[r_i]
            .parse()
            .map_err(|_| CliError::Runtime(format!("summary row {}: bad regret value", row + 2)))?;
        groups.entry(policy).or_default().push((t, regret));
    }
    if groups.is_empty() {
        return Err(CliError::Runtime(match policy_filter {
            Some(f) => format!("no rows match policy `{f}`"),
            None => "no data rows in summary file".into(),
        }));
    }

    let mut report = Vec::new();
    for (policy, points) in &groups {
        match loglog_slope(points) {
            Ok(fit) => {
                println!(
                    "{policy}: slope {:.4} over {} points (T = {:.0}..{:.0}{})",
                    fit.slope,
                    fit.points_used,
                    points.first().unwrap().0,
                    points.last().unwrap().0,
                    if fit.excluded > 0 {
                        format!(", {} nonpositive excluded", fit.excluded)
                    } else {
                        String::new()
                    }
                );
                report.push((policy.clone(), fit));
            }
            Err(e) if policy_filter.is_some() || groups.len() == 1 => {
                return Err(CliError::Runtime(format!("{policy}: {e}")));
            }
            Err(e) => eprintln!("skipping {policy}: {e}"),
        }
    }
    if report.is_empty() {
        return Err(CliError::Runtime(
            "no policy had enough rows for a slope fit".into(),
        ));
    }

    if let Some(path) = out {
        let mut file = BufWriter::new(File::create(path).map_err(runtime)?);
        writeln!(file, "policy,slope,points,excluded").map_err(runtime)?;
        for (policy, fit) in &report {
            writeln!(
                file,
                "{policy},{},{},{}",
                fit.slope, fit.points_used, fit.excluded
            )
            .map_err(runtime)?;
        }
        file.flush().map_err(runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
