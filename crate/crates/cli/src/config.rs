//! Experiment configuration: a JSON file describing the environment, the
//! policy roster, the horizon grid, the budget rule, and run parameters.
//! Command-line flags override file values; the `DRIFTBANDIT_SEED`
//! environment variable overrides the file's base seed (flags still win).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    /// Two-armed opposing sinusoids; takes the horizon and budget from the
    /// sweep point.
    Sinusoidal,
    /// Randomly sampled piecewise-linear parameter path on the standard
    /// basis (or on `n_actions` random unit vectors when set).
    PiecewiseLinear {
        dim: usize,
        #[serde(default = "default_breaks")]
        n_breaks: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        n_actions: Option<usize>,
    },
    /// Blockwise-constant stress instance.
    LowerBound {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Replay of user-supplied CSV files; the horizon comes from the file
    /// and the grid is ignored.
    Replay {
        path_csv: PathBuf,
        actions_csv: PathBuf,
    },
}

fn default_breaks() -> usize {
    30
}

impl EnvSpec {
    /// Replaces the generator seed, for environments that have one.
    pub fn set_seed(&mut self, new_seed: u64) {
        match self {
            EnvSpec::PiecewiseLinear { seed, .. } | EnvSpec::LowerBound { seed, .. } => {
                *seed = new_seed;
            }
            EnvSpec::Sinusoidal | EnvSpec::Replay { .. } => {}
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySetting {
    #[default]
    Linear,
    DArmed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tuning {
    /// Window minimizing the explicit regret bound, budget known.
    #[default]
    Opt,
    /// Same rule with the budget factor dropped.
    OptOblivious,
    /// Rate-optimal window, budget known.
    Tuned,
    /// Rate-optimal window, budget-free.
    Oblivious,
    /// Fixed window size.
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyChoice {
    /// Sliding-window UCB with a tuning rule.
    SwUcb {
        #[serde(default)]
        tuning: Tuning,
        #[serde(default)]
        setting: PolicySetting,
    },
    /// Stationary baseline: the window spans the whole horizon.
    Ucb {
        #[serde(default)]
        setting: PolicySetting,
    },
    /// Bandit-over-bandit meta policy.
    Bob {
        #[serde(default)]
        setting: PolicySetting,
    },
    /// Plain adversarial exponential weights.
    Exp3,
    /// Restarted exponential weights with budget-tuned batch length.
    Exp3s,
    /// Weight-sharing variant.
    Exp3sShare,
}

impl PolicyChoice {
    /// Row label used in report files.
    pub fn name(&self) -> String {
        match self {
            PolicyChoice::SwUcb { tuning, .. } => match tuning {
                Tuning::Opt => "sw-ucb-opt".into(),
                Tuning::OptOblivious => "sw-ucb-opt-obl".into(),
                Tuning::Tuned => "sw-ucb-tuned".into(),
                Tuning::Oblivious => "sw-ucb-obl".into(),
                Tuning::Fixed(w) => format!("sw-ucb-w{w}"),
            },
            PolicyChoice::Ucb { .. } => "ucb".into(),
            PolicyChoice::Bob { .. } => "bob".into(),
            PolicyChoice::Exp3 => "exp3".into(),
            PolicyChoice::Exp3s => "exp3s".into(),
            PolicyChoice::Exp3sShare => "exp3s-share".into(),
        }
    }

    pub fn setting(&self) -> PolicySetting {
        match self {
            PolicyChoice::SwUcb { setting, .. }
            | PolicyChoice::Ucb { setting }
            | PolicyChoice::Bob { setting } => *setting,
            _ => PolicySetting::DArmed,
        }
    }
}

/// How the variation budget is derived at each sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BtRule {
    Constant {
        value: f64,
    },
    /// `B = T^(1/3)`.
    TPowerThird,
    /// One value per grid point.
    Explicit {
        values: Vec<f64>,
    },
}

impl BtRule {
    pub fn value(&self, index: usize, horizon: usize) -> f64 {
        match self {
            BtRule::Constant { value } => *value,
            BtRule::TPowerThird => (horizon as f64).powf(1.0 / 3.0),
            BtRule::Explicit { values } => values[index],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub policies: Vec<PolicyChoice>,
    pub t_grid: Vec<usize>,
    pub b_t_rule: BtRule,
    pub replications: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    /// Emit per-round trace rows every this many rounds; omit for no traces.
    #[serde(default)]
    pub trace_every: Option<usize>,
    /// Replication parallelism bound; defaults to the CPU count.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.policies.is_empty() {
            return Err("config error: at least one policy is required".into());
        }
        if self.t_grid.is_empty() {
            return Err("config error: t_grid must not be empty".into());
        }
        if !self.t_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err("config error: t_grid must be strictly ascending".into());
        }
        if self.t_grid[0] == 0 {
            return Err("config error: horizons must be positive".into());
        }
        if self.replications == 0 {
            return Err("config error: replications must be at least 1".into());
        }
        if let BtRule::Explicit { values } = &self.b_t_rule {
            if values.len() != self.t_grid.len() {
                return Err(format!(
                    "config error: explicit budget rule has {} values for {} grid points",
                    values.len(),
                    self.t_grid.len()
                ));
            }
        }
        if let Some(0) = self.trace_every {
            return Err("config error: trace_every must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "environment": {"kind": "sinusoidal"},
        "policies": [
            {"kind": "sw-ucb", "tuning": "opt"},
            {"kind": "sw-ucb", "tuning": {"fixed": 500}, "setting": "d-armed"},
            {"kind": "bob"},
            {"kind": "exp3s"}
        ],
        "t_grid": [1000, 2000],
        "b_t_rule": {"kind": "constant", "value": 1.0},
        "replications": 3,
        "output_dir": "out"
    }"#;

    #[test]
    fn round_trip_is_identity() {
        let config = ExperimentConfig::parse(EXAMPLE).unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let reparsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn unknown_environment_kind_lists_valid_ones() {
        let bad = EXAMPLE.replace("\"sinusoidal\"", "\"mystery\"");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.contains("unknown variant"), "{err}");
        for kind in ["sinusoidal", "piecewise-linear", "lower-bound", "replay"] {
            assert!(err.contains(kind), "{err} should list {kind}");
        }
    }

    #[test]
    fn grid_must_ascend() {
        let bad = EXAMPLE.replace("[1000, 2000]", "[2000, 1000]");
        assert!(ExperimentConfig::parse(&bad)
            .unwrap_err()
            .contains("ascending"));
    }

    #[test]
    fn explicit_rule_length_must_match() {
        let bad = EXAMPLE.replace(
            r#"{"kind": "constant", "value": 1.0}"#,
            r#"{"kind": "explicit", "values": [1.0]}"#,
        );
        assert!(ExperimentConfig::parse(&bad)
            .unwrap_err()
            .contains("grid points"));
    }

    #[test]
    fn policy_names_are_stable() {
        let config = ExperimentConfig::parse(EXAMPLE).unwrap();
        let names: Vec<String> = config.policies.iter().map(|p| p.name()).collect();
        assert_eq!(names, vec!["sw-ucb-opt", "sw-ucb-w500", "bob", "exp3s"]);
    }
}
