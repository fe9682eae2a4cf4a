//! Experiment configuration: a flat `key = value` text format with section
//! headers, strict about unknown keys, with repeatable `section.key=value`
//! overrides layered on top before validation.
//!
//! ```text
//! [experiment]
//! strategy = procurl-target
//! seeds = 1,2,3
//! total_env_steps = 20000
//! ...
//! ```

use crate::envs::bandit::ReprScheme;
use crate::error::{Error, Result};
use crate::teacher::{SimilarityKernel, Strategy};
use crate::value::EvalMode;
use std::collections::BTreeMap;
use std::path::PathBuf;

const SECTIONS: [&str; 4] = ["experiment", "env", "teacher", "learner"];

const EXPERIMENT_KEYS: [&str; 13] = [
    "strategy",
    "seeds",
    "total_env_steps",
    "eval_every",
    "n_pos",
    "n_unif",
    "n_targ",
    "held_out_size",
    "eval_mode",
    "rollouts_per_step",
    "record_wall_time",
    "pool_refresh_every",
    "out_dir",
];
const ENV_KEYS: [&str; 12] = [
    "kind",
    "grid_size",
    "wall_row",
    "widths",
    "slip",
    "discount",
    "horizon_cap",
    "target",
    "dim",
    "n_contexts",
    "scheme",
    "v_max",
];
const TEACHER_KEYS: [&str; 2] = ["beta", "kernel"];
const LEARNER_KEYS: [&str; 4] = ["learning_rate", "discount", "features", "init_action_bias"];

fn keys_for(section: &str) -> &'static [&'static str] {
    match section {
        "experiment" => &EXPERIMENT_KEYS,
        "env" => &ENV_KEYS,
        "teacher" => &TEACHER_KEYS,
        "learner" => &LEARNER_KEYS,
        _ => &[],
    }
}

/// Raw parsed file: `(section, key) -> (value, source line)`.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    /// Parses the section-header key-value format. Unknown sections or keys,
    /// duplicates, and malformed lines are errors with line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {lineno}: unterminated section header")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!(
                        "line {lineno}: unknown section [{name}]"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let section = section.as_ref().ok_or_else(|| {
                Error::Config(format!("line {lineno}: key before any [section] header"))
            })?;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected 'key = value'"))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !keys_for(section).contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "line {lineno}: unknown key '{key}' in [{section}]"
                )));
            }
            if entries
                .insert((section.clone(), key.clone()), (value, lineno))
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {lineno}: duplicate key '{key}' in [{section}]"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{spec}': expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override '{spec}': expected section.key=value")))?;
        if !SECTIONS.contains(&section) {
            return Err(Error::Config(format!("override '{spec}': unknown section '{section}'")));
        }
        if !keys_for(section).contains(&key) {
            return Err(Error::Config(format!(
                "override '{spec}': unknown key '{key}' in [{section}]"
            )));
        }
        self.entries.insert(
            (section.to_string(), key.to_string()),
            (value.trim().to_string(), 0),
        );
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn parse_with<T>(
        &self,
        section: &str,
        key: &str,
        what: &str,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some((value, line)) => f(value).map(Some).ok_or_else(|| {
                Error::Config(format!(
                    "[{section}] {key} (line {line}): invalid {what} '{value}'"
                ))
            }),
        }
    }

    fn required<T>(&self, section: &str, key: &str, parsed: Option<T>) -> Result<T> {
        parsed.ok_or_else(|| Error::Config(format!("[{section}] missing required key '{key}'")))
    }

    fn usize_of(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parse_with(section, key, "integer", |v| v.parse().ok())
    }

    fn f64_of(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parse_with(section, key, "number", |v| {
            v.parse::<f64>().ok().filter(|x| x.is_finite())
        })
    }

    fn bool_of(&self, section: &str, key: &str) -> Result<Option<bool>> {
        self.parse_with(section, key, "boolean", |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn str_of(&self, section: &str, key: &str) -> Option<String> {
        self.get(section, key).map(|(v, _)| v.clone())
    }
}

/// Which environment family to build.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvSpecConfig {
    GateGrid {
        grid_size: usize,
        wall_row: Option<usize>,
        widths: Vec<usize>,
        slip: f64,
        discount: f64,
        horizon_cap: usize,
    },
    Bandit {
        dim: usize,
        n_contexts: usize,
        scheme: ReprScheme,
    },
}

/// Parses `orthogonal`, `random-unit`, or `clustered:<k>:<spread>`.
pub fn parse_repr_scheme(text: &str) -> Result<ReprScheme> {
    match text {
        "orthogonal" => Ok(ReprScheme::Orthogonal),
        "random-unit" => Ok(ReprScheme::RandomUnit),
        other => {
            let parts: Vec<&str> = other.split(':').collect();
            if parts.len() == 3 && parts[0] == "clustered" {
                let k = parts[1]
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad cluster count in '{other}'")))?;
                let spread = parts[2]
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad cluster spread in '{other}'")))?;
                Ok(ReprScheme::Clustered { k, spread })
            } else {
                Err(Error::Config(format!(
                    "scheme: expected 'orthogonal', 'random-unit', or 'clustered:<k>:<spread>', got '{other}'"
                )))
            }
        }
    }
}

/// How the target distribution is named in the config.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetConfig {
    /// One of the environment's named target specs.
    Named(String),
    /// Point mass on an explicit context id.
    ContextId(usize),
}

/// Per-step feature map choice for tabular environments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureChoice {
    /// One-hot over (row, column relative to the gate, action) above the
    /// wall and absolute below it; the gate-approach skill transfers across
    /// tasks. Gate-grid only.
    GateRelative,
    /// One-hot over `(state, action)` with affine context terms; behavior
    /// generalizes across tasks.
    ContextAffine,
    /// One-hot over `(state, action)`, shared across contexts.
    SharedTabular,
    /// One-hot over `(state, context, action)`; no transfer between tasks.
    PerContextTabular,
}

/// Fully parsed and validated experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub total_env_steps: u64,
    pub eval_every: u64,
    pub n_pos: u64,
    pub n_unif: usize,
    pub n_targ: usize,
    pub held_out_size: usize,
    pub eval_mode: EvalMode,
    pub rollouts_per_step: usize,
    pub record_wall_time: bool,
    /// Env-step cadence for resampling the uniform pool; 0 disables.
    pub pool_refresh_every: u64,
    /// Output directory; required by `run`, optional when the config is used
    /// programmatically.
    pub out_dir: Option<PathBuf>,
    pub env: EnvSpecConfig,
    pub target: TargetConfig,
    pub v_max: f64,
    pub beta: f64,
    pub kernel: SimilarityKernel,
    pub learning_rate: f64,
    /// Learner discount; defaults to the environment discount.
    pub discount: f64,
    pub features: FeatureChoice,
    /// Optional `(action, logit bias)` applied to the initial parameters as a
    /// directed exploration prior.
    pub init_action_bias: Option<(usize, f64)>,
}

impl ExperimentConfig {
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let strategy: Strategy = raw
            .required("experiment", "strategy", raw.str_of("experiment", "strategy"))?
            .parse()?;
        let seeds_text = raw.required("experiment", "seeds", raw.str_of("experiment", "seeds"))?;
        let seeds: Vec<u64> = seeds_text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("[experiment] seeds: bad entry '{s}'")))
            })
            .collect::<Result<_>>()?;
        if seeds.is_empty() {
            return Err(Error::Config("[experiment] seeds: must be non-empty".into()));
        }
        {
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != seeds.len() {
                return Err(Error::Config("[experiment] seeds: must be distinct".into()));
            }
        }
        let total_env_steps = raw.required(
            "experiment",
            "total_env_steps",
            raw.usize_of("experiment", "total_env_steps")?,
        )? as u64;
        let eval_every = raw.required(
            "experiment",
            "eval_every",
            raw.usize_of("experiment", "eval_every")?,
        )? as u64;
        let n_pos =
            raw.required("experiment", "n_pos", raw.usize_of("experiment", "n_pos")?)? as u64;
        if total_env_steps == 0 || eval_every == 0 || n_pos == 0 {
            return Err(Error::Config(
                "[experiment] total_env_steps, eval_every, n_pos must all be >= 1".into(),
            ));
        }
        let n_unif = raw.usize_of("experiment", "n_unif")?.unwrap_or(2000);
        let n_targ = raw.usize_of("experiment", "n_targ")?.unwrap_or(400);
        let held_out_size = raw.usize_of("experiment", "held_out_size")?.unwrap_or(100);
        if n_unif == 0 || n_targ == 0 || held_out_size == 0 {
            return Err(Error::Config(
                "[experiment] n_unif, n_targ, held_out_size must all be >= 1".into(),
            ));
        }
        let eval_mode = match raw.str_of("experiment", "eval_mode").as_deref() {
            None | Some("exact") => EvalMode::Exact,
            Some(other) => match other.strip_prefix("mc:").and_then(|n| n.parse().ok()) {
                Some(episodes) if episodes > 0 => EvalMode::MonteCarlo { episodes },
                _ => {
                    return Err(Error::Config(format!(
                        "[experiment] eval_mode: expected 'exact' or 'mc:<episodes>', got '{other}'"
                    )))
                }
            },
        };
        let rollouts_per_step = raw
            .usize_of("experiment", "rollouts_per_step")?
            .unwrap_or(1);
        if rollouts_per_step == 0 {
            return Err(Error::Config(
                "[experiment] rollouts_per_step must be >= 1".into(),
            ));
        }
        let record_wall_time = raw.bool_of("experiment", "record_wall_time")?.unwrap_or(false);
        let pool_refresh_every = raw
            .usize_of("experiment", "pool_refresh_every")?
            .unwrap_or(0) as u64;
        let out_dir = raw.str_of("experiment", "out_dir").map(PathBuf::from);

        let kind = raw.required("env", "kind", raw.str_of("env", "kind"))?;
        let env = match kind.as_str() {
            "gate_grid" => {
                let grid_size = raw.usize_of("env", "grid_size")?.unwrap_or(11);
                let widths = match raw.str_of("env", "widths") {
                    None => (0..)
                        .map(|k| 2 * k + 1)
                        .take_while(|&w| w <= grid_size)
                        .collect(),
                    Some(text) => text
                        .split(',')
                        .map(|w| {
                            w.trim().parse::<usize>().map_err(|_| {
                                Error::Config(format!("[env] widths: bad entry '{w}'"))
                            })
                        })
                        .collect::<Result<_>>()?,
                };
                EnvSpecConfig::GateGrid {
                    grid_size,
                    wall_row: raw.usize_of("env", "wall_row")?,
                    widths,
                    slip: raw.f64_of("env", "slip")?.unwrap_or(0.05),
                    discount: raw.f64_of("env", "discount")?.unwrap_or(0.99),
                    horizon_cap: raw.usize_of("env", "horizon_cap")?.unwrap_or(100),
                }
            }
            "bandit" => EnvSpecConfig::Bandit {
                dim: raw.usize_of("env", "dim")?.unwrap_or(8),
                n_contexts: raw.usize_of("env", "n_contexts")?.unwrap_or(10),
                scheme: parse_repr_scheme(
                    raw.str_of("env", "scheme")
                        .unwrap_or_else(|| "clustered:3:0.15".into())
                        .as_str(),
                )?,
            },
            other => {
                return Err(Error::Config(format!(
                    "[env] kind: expected 'gate_grid' or 'bandit', got '{other}'"
                )))
            }
        };
        let target_text = raw.required("env", "target", raw.str_of("env", "target"))?;
        let target = match target_text.strip_prefix("context:") {
            Some(id) => TargetConfig::ContextId(id.parse().map_err(|_| {
                Error::Config(format!("[env] target: bad context id in '{target_text}'"))
            })?),
            None => TargetConfig::Named(target_text),
        };
        let v_max = raw.f64_of("env", "v_max")?.unwrap_or(1.0);
        if v_max <= 0.0 {
            return Err(Error::Config(format!("[env] v_max {v_max} must be > 0")));
        }

        let beta = raw.f64_of("teacher", "beta")?.unwrap_or(130.0);
        if beta < 0.0 {
            return Err(Error::Config(format!("[teacher] beta {beta} must be >= 0")));
        }
        let kernel = match raw.str_of("teacher", "kernel") {
            None => SimilarityKernel::NegExpDistance,
            Some(text) => text.parse()?,
        };

        let learning_rate = raw
            .required("learner", "learning_rate", raw.f64_of("learner", "learning_rate")?)?;
        if learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "[learner] learning_rate {learning_rate} must be >= 0"
            )));
        }
        let env_discount = match &env {
            EnvSpecConfig::GateGrid { discount, .. } => *discount,
            EnvSpecConfig::Bandit { .. } => 0.0,
        };
        let discount = raw.f64_of("learner", "discount")?.unwrap_or(env_discount);
        let features = match raw.str_of("learner", "features").as_deref() {
            None | Some("gate-relative") => FeatureChoice::GateRelative,
            Some("context-affine") => FeatureChoice::ContextAffine,
            Some("shared-tabular") => FeatureChoice::SharedTabular,
            Some("per-context-tabular") => FeatureChoice::PerContextTabular,
            Some(other) => {
                return Err(Error::Config(format!(
                    "[learner] features: expected 'gate-relative', 'context-affine', 'shared-tabular', or 'per-context-tabular', got '{other}'"
                )))
            }
        };
        if features == FeatureChoice::GateRelative && !matches!(env, EnvSpecConfig::GateGrid { .. })
        {
            return Err(Error::Config(
                "[learner] features: 'gate-relative' requires the gate_grid env".into(),
            ));
        }
        let init_action_bias = match raw.str_of("learner", "init_action_bias") {
            None => None,
            Some(text) => {
                let parsed = text.split_once(':').and_then(|(a, v)| {
                    Some((a.trim().parse::<usize>().ok()?, v.trim().parse::<f64>().ok()?))
                });
                match parsed {
                    Some(pair) if pair.1.is_finite() => Some(pair),
                    _ => {
                        return Err(Error::Config(format!(
                            "[learner] init_action_bias: expected '<action>:<value>', got '{text}'"
                        )))
                    }
                }
            }
        };

        Ok(Self {
            strategy,
            seeds,
            total_env_steps,
            eval_every,
            n_pos,
            n_unif,
            n_targ,
            held_out_size,
            eval_mode,
            rollouts_per_step,
            record_wall_time,
            pool_refresh_every,
            out_dir,
            env,
            target,
            v_max,
            beta,
            kernel,
            learning_rate,
            discount,
            features,
            init_action_bias,
        })
    }

    /// Reads and parses a config file, then applies overrides.
    pub fn from_file(path: &PathBuf, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        Self::from_text(&text, overrides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
[experiment]
strategy = procurl-target
seeds = 1,2,3
total_env_steps = 1000
eval_every = 250
n_pos = 200

[env]
kind = gate_grid
grid_size = 7
target = point-mass-edge

[learner]
learning_rate = 2.0
";

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_text(GOOD, &[]).unwrap();
        assert_eq!(cfg.strategy, Strategy::ProcurlTarget);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.beta, 130.0);
        assert_eq!(cfg.discount, 0.99);
        assert_eq!(cfg.features, FeatureChoice::SharedTabular);
        match cfg.env {
            EnvSpecConfig::GateGrid { grid_size, ref widths, .. } => {
                assert_eq!(grid_size, 7);
                assert_eq!(widths, &vec![1, 3, 5, 7]);
            }
            _ => panic!("wrong env kind"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let bad = GOOD.replace("eval_every", "eval_evry");
        let err = ExperimentConfig::from_text(&bad, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("eval_evry") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn duplicate_seed_rejected() {
        let bad = GOOD.replace("seeds = 1,2,3", "seeds = 1,2,2");
        assert!(ExperimentConfig::from_text(&bad, &[]).is_err());
    }

    #[test]
    fn override_changes_value_and_bad_override_fails() {
        let cfg =
            ExperimentConfig::from_text(GOOD, &["teacher.beta=50".to_string()]).unwrap();
        assert_eq!(cfg.beta, 50.0);
        assert!(ExperimentConfig::from_text(GOOD, &["nope.key=1".to_string()]).is_err());
        assert!(ExperimentConfig::from_text(GOOD, &["teacher.gamma=1".to_string()]).is_err());
    }

    #[test]
    fn bad_number_reports_field_and_line() {
        let bad = GOOD.replace("total_env_steps = 1000", "total_env_steps = many");
        let msg = ExperimentConfig::from_text(&bad, &[]).unwrap_err().to_string();
        assert!(msg.contains("total_env_steps"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn mc_eval_mode_parses() {
        let text = GOOD.to_string() + "\n";
        let cfg = ExperimentConfig::from_text(
            &text,
            &["experiment.eval_mode=mc:50".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.eval_mode, EvalMode::MonteCarlo { episodes: 50 });
    }
}
