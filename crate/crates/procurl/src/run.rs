//! The experiment harness: builds the environment, drives the teacher-student
//! loop per seed, and writes metrics, selection logs, and learning-curve
//! charts.
//!
//! Determinism contract: a `(config, seed)` pair maps to byte-identical
//! output files, independent of how many threads execute the per-seed work.
//! Wall-clock timing is therefore written as 0 unless `record_wall_time` is
//! set, since real timings would break byte-identity.

use crate::chart::{self, ChartOptions};
use crate::config::{EnvSpecConfig, ExperimentConfig, FeatureChoice, TargetConfig};
use crate::envs::bandit::{make_bandit, BanditFeatures};
use crate::envs::gate_grid::{make_gate_grid, GateGridMdp, GateGridSpec};
use crate::error::{Error, Result};
use crate::learner::{
    reinforce_update_batch, ContextAffineFeatures, FeatureMap, LearnerConfig, PolicyParams,
    SoftmaxPolicy, TabularPerContextFeatures, TabularSharedFeatures,
};
use crate::mdp::{build_pools, rollout, Context, ContextualMdp, ExactBudget, TargetSpec};
use crate::num::{real, Real};
use rand::Rng as _;
use crate::rng::{stream_rng, Stream};
use crate::teacher::{
    select_baseline, select_gradient_align, select_greedy_oracle, select_procurl_unif,
    select_softmax_pair, Strategy, TeacherConfig,
};
use crate::value::{refresh_values, value_exact, value_mc, EvalMode, ValueTable};
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const METRICS_HEADER: &str =
    "seed,env_steps,mean_target_return,mean_distance_to_target,strategy,wall_time_ms";
pub const SELECTIONS_HEADER: &str =
    "step,strategy,chosen_context_id,paired_target_id,score,distance_to_target";

/// One evaluation snapshot.
#[derive(Clone, Debug)]
pub struct MetricRow<R: Real> {
    pub seed: u64,
    pub env_steps: u64,
    pub mean_target_return: R,
    /// Mean distance of the selections made since the previous snapshot to
    /// the nearest target mode (0 for the step-0 row).
    pub mean_distance_to_target: R,
    pub strategy: Strategy,
    pub wall_time_ms: u64,
}

/// One teacher selection.
#[derive(Clone, Debug)]
pub struct SelectionRow<R: Real> {
    /// Teacher step index within the seed, starting at 1.
    pub step: u64,
    pub strategy: Strategy,
    pub chosen_context_id: usize,
    /// Paired target id for pair-sampling strategies, -1 otherwise.
    pub paired_target_id: i64,
    pub score: R,
    pub distance_to_target: R,
}

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedOutput<R: Real> {
    pub metrics: Vec<MetricRow<R>>,
    pub selections: Vec<SelectionRow<R>>,
    pub final_params: PolicyParams<R>,
}

/// Paths written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub metrics_path: PathBuf,
    pub selections_path: PathBuf,
    pub chart_paths: Vec<PathBuf>,
}

/// Mean policy value over a held-out context set. Duplicates are folded into
/// weights, so each distinct context is evaluated once.
pub fn evaluate_policy<R, M, F, G>(
    params: &PolicyParams<R>,
    mdp: &M,
    phi: &F,
    held_out: &[Context<R>],
    mode: EvalMode,
    rng: &mut G,
) -> Result<R>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    F: FeatureMap<R> + ?Sized,
    G: rand::Rng + ?Sized,
{
    if held_out.is_empty() {
        return Err(Error::Config("held-out set is empty".into()));
    }
    let mut distinct: std::collections::BTreeMap<usize, (&Context<R>, usize)> =
        std::collections::BTreeMap::new();
    for c in held_out {
        distinct.entry(c.id).and_modify(|e| e.1 += 1).or_insert((c, 1));
    }
    let policy = SoftmaxPolicy::new(params, phi);
    let mut total = R::zero();
    for (c, count) in distinct.values() {
        let v = match mode {
            EvalMode::Exact => value_exact(mdp, &policy, c)?,
            EvalMode::MonteCarlo { episodes } => value_mc(mdp, &policy, c, episodes, rng)?,
        };
        total += v * real(*count as f64);
    }
    Ok(total / real(held_out.len() as f64))
}

fn distance_to_nearest_mode<R: Real>(c: &Context<R>, modes: &[Context<R>]) -> R {
    modes
        .iter()
        .map(|m| c.distance(m))
        .fold(R::infinity(), |a, b| a.min(b))
}

struct SeedRun<'a, R: Real, M: ContextualMdp<R>, F: FeatureMap<R>> {
    cfg: &'a ExperimentConfig,
    mdp: &'a M,
    phi: &'a F,
    task_space: &'a [Context<R>],
    target: &'a TargetSpec,
    held_out: &'a [Context<R>],
    modes: &'a [Context<R>],
}

impl<R: Real, M: ContextualMdp<R>, F: FeatureMap<R>> SeedRun<'_, R, M, F> {
    fn run(&self, seed: u64) -> Result<SeedOutput<R>> {
        let cfg = self.cfg;
        let strategy = cfg.strategy;
        let teacher_cfg = TeacherConfig {
            strategy,
            beta: real(cfg.beta),
            kernel: cfg.kernel,
        };
        teacher_cfg.validate()?;
        let learner_cfg = LearnerConfig {
            learning_rate: real(cfg.learning_rate),
            discount: real(cfg.discount),
        };
        learner_cfg.validate()?;
        let budget = ExactBudget::default();

        let mut pools_rng = stream_rng(seed, Stream::Pools);
        let mut teacher_rng = stream_rng(seed, Stream::Teacher);
        let mut roll_rng = stream_rng(seed, Stream::Rollouts);
        let mut eval_rng = stream_rng(seed, Stream::Eval);

        let mut pools = build_pools(
            self.task_space,
            self.target,
            cfg.n_unif,
            cfg.n_targ,
            &mut pools_rng,
        )?;
        // Point-mass target context for strategies that need a single target.
        let single_target: Option<&Context<R>> = match self.target {
            TargetSpec::PointMass { id } => Some(&self.task_space[*id]),
            _ => None,
        };
        let need_single = matches!(strategy, Strategy::GradientAlign | Strategy::GreedyOracle);
        if need_single && single_target.is_none() {
            return Err(Error::Config(format!(
                "strategy {strategy} requires a point-mass target"
            )));
        }
        let resolved_targets = self.target.resolve(self.task_space)?;

        let mut params = PolicyParams::<R>::zeros(self.phi.dim());
        if let Some((action, value)) = cfg.init_action_bias {
            if action >= self.phi.n_actions() {
                return Err(Error::Config(format!(
                    "init_action_bias action {action} out of range"
                )));
            }
            self.phi
                .add_uniform_action_bias(&mut params.0, action, real(value));
        }
        let mut table = ValueTable::new(real(cfg.v_max))?;
        let uses_table = matches!(strategy, Strategy::ProcurlTarget | Strategy::ProcurlUnif);

        let started = Instant::now();
        let mut metrics = Vec::new();
        let mut selections = Vec::new();
        let mut env_steps: u64 = 0;
        let mut teacher_step: u64 = 0;
        let mut last_eval_bucket: u64 = 0;
        let mut last_refresh: u64 = 0;
        let mut last_pool_refresh: u64 = 0;
        let mut window_dist: Vec<R> = Vec::new();

        macro_rules! push_eval {
            () => {{
                let policy_value = evaluate_policy(
                    &params,
                    self.mdp,
                    self.phi,
                    self.held_out,
                    cfg.eval_mode,
                    &mut eval_rng,
                )?;
                let mean_dist = if window_dist.is_empty() {
                    R::zero()
                } else {
                    window_dist.iter().copied().sum::<R>()
                        / real(window_dist.len() as f64)
                };
                window_dist.clear();
                metrics.push(MetricRow {
                    seed,
                    env_steps,
                    mean_target_return: policy_value,
                    mean_distance_to_target: mean_dist,
                    strategy,
                    wall_time_ms: if cfg.record_wall_time {
                        started.elapsed().as_millis() as u64
                    } else {
                        0
                    },
                });
            }};
        }

        if uses_table {
            refresh_values(
                &mut table,
                self.mdp,
                &SoftmaxPolicy::new(&params, self.phi),
                &pools,
                cfg.eval_mode,
                true,
                0,
                &mut eval_rng,
            )?;
        }
        push_eval!();

        while env_steps < cfg.total_env_steps {
            teacher_step += 1;
            let (chosen, paired, score): (Context<R>, i64, R) = match strategy {
                Strategy::ProcurlTarget => {
                    let choice =
                        select_softmax_pair(&table, &pools, &teacher_cfg, &mut teacher_rng)?;
                    (choice.task, choice.target.id as i64, choice.score)
                }
                Strategy::ProcurlUnif => {
                    let (c, z) =
                        select_procurl_unif(&table, &pools, &teacher_cfg, &mut teacher_rng)?;
                    (c, -1, z)
                }
                Strategy::Iid | Strategy::Target => {
                    let c = select_baseline(&pools, strategy, &mut teacher_rng)?;
                    (c, -1, R::zero())
                }
                Strategy::GradientAlign => {
                    let targ = single_target.unwrap();
                    let candidates = distinct_contexts(&pools.unif_pool);
                    let (c, align) = select_gradient_align(
                        &params,
                        self.mdp,
                        self.phi,
                        &candidates,
                        targ,
                        &budget,
                    )?;
                    (c, targ.id as i64, align)
                }
                Strategy::GreedyOracle => {
                    let candidates = distinct_contexts(&pools.unif_pool);
                    let (c, improvement) = select_greedy_oracle(
                        &params,
                        self.mdp,
                        self.phi,
                        &learner_cfg,
                        &candidates,
                        &resolved_targets,
                        &budget,
                    )?;
                    (c, -1, improvement)
                }
            };
            let dist = distance_to_nearest_mode(&chosen, self.modes);
            window_dist.push(dist);
            selections.push(SelectionRow {
                step: teacher_step,
                strategy,
                chosen_context_id: chosen.id,
                paired_target_id: paired,
                score,
                distance_to_target: dist,
            });

            let batch: Vec<_> = (0..cfg.rollouts_per_step)
                .map(|_| {
                    rollout(
                        self.mdp,
                        &SoftmaxPolicy::new(&params, self.phi),
                        &chosen,
                        &mut roll_rng,
                    )
                })
                .collect();
            env_steps += batch.iter().map(|t| t.len() as u64).sum::<u64>();
            params = reinforce_update_batch(&params, &batch, self.phi, &learner_cfg)?;

            if cfg.pool_refresh_every > 0
                && env_steps - last_pool_refresh >= cfg.pool_refresh_every
            {
                pools.unif_pool = (0..cfg.n_unif)
                    .map(|_| {
                        self.task_space[pools_rng.random_range(0..self.task_space.len())]
                            .clone()
                    })
                    .collect();
                last_pool_refresh = env_steps;
                if uses_table {
                    refresh_values(
                        &mut table,
                        self.mdp,
                        &SoftmaxPolicy::new(&params, self.phi),
                        &pools,
                        cfg.eval_mode,
                        true,
                        env_steps,
                        &mut eval_rng,
                    )?;
                    last_refresh = env_steps;
                }
            }
            if uses_table && env_steps - last_refresh >= cfg.n_pos {
                refresh_values(
                    &mut table,
                    self.mdp,
                    &SoftmaxPolicy::new(&params, self.phi),
                    &pools,
                    cfg.eval_mode,
                    true,
                    env_steps,
                    &mut eval_rng,
                )?;
                last_refresh = env_steps;
            }
            if env_steps / cfg.eval_every > last_eval_bucket {
                last_eval_bucket = env_steps / cfg.eval_every;
                push_eval!();
            }
        }
        Ok(SeedOutput {
            metrics,
            selections,
            final_params: params,
        })
    }
}

fn distinct_contexts<R: Real>(pool: &[Context<R>]) -> Vec<Context<R>> {
    let mut map: std::collections::BTreeMap<usize, &Context<R>> = std::collections::BTreeMap::new();
    for c in pool {
        map.entry(c.id).or_insert(c);
    }
    map.into_values().cloned().collect()
}

/// Runs every seed of the experiment (seeds execute in parallel) and returns
/// the per-seed outputs in config order.
pub fn run_seeds<R, M, F>(
    cfg: &ExperimentConfig,
    mdp: &M,
    phi: &F,
    task_space: &[Context<R>],
    target: &TargetSpec,
) -> Result<Vec<SeedOutput<R>>>
where
    R: Real,
    M: ContextualMdp<R> + Sync,
    F: FeatureMap<R> + Sync,
{
    target.validate(task_space.len())?;
    let mut held_rng = stream_rng(cfg.seeds[0], Stream::HeldOut);
    let held_out: Vec<Context<R>> = (0..cfg.held_out_size)
        .map(|_| target.sample(task_space, &mut held_rng).clone())
        .collect();
    let modes: Vec<Context<R>> = target
        .resolve(task_space)?
        .into_iter()
        .map(|(c, _)| c.clone())
        .collect();
    let runner = SeedRun {
        cfg,
        mdp,
        phi,
        task_space,
        target,
        held_out: &held_out,
        modes: &modes,
    };
    cfg.seeds
        .par_iter()
        .map(|&seed| runner.run(seed))
        .collect()
}

/// Resolves the configured target name against the environment's library.
pub fn resolve_grid_target<R: Real>(
    target: &TargetConfig,
    mdp: &GateGridMdp<R>,
) -> Result<TargetSpec> {
    match target {
        TargetConfig::ContextId(id) => {
            let spec = TargetSpec::PointMass { id: *id };
            spec.validate(mdp.task_space().len())?;
            Ok(spec)
        }
        TargetConfig::Named(name) => mdp
            .target_spec_library()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, spec)| spec)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown target '{name}' (gate_grid targets: point-mass-edge, two-mode-edges, uniform-all, context:<id>)"
                ))
            }),
    }
}

fn resolve_bandit_target(target: &TargetConfig, n_contexts: usize) -> Result<TargetSpec> {
    let spec = match target {
        TargetConfig::ContextId(id) => TargetSpec::PointMass { id: *id },
        TargetConfig::Named(name) if name == "uniform-all" => TargetSpec::UniformSubset {
            ids: (0..n_contexts).collect(),
        },
        TargetConfig::Named(name) => {
            return Err(Error::Config(format!(
                "unknown target '{name}' (bandit targets: uniform-all, context:<id>)"
            )))
        }
    };
    spec.validate(n_contexts)?;
    Ok(spec)
}

/// Builds a gate grid from its config block.
pub fn build_grid<R: Real>(env: &EnvSpecConfig) -> Result<GateGridMdp<R>> {
    match env {
        EnvSpecConfig::GateGrid {
            grid_size,
            wall_row,
            widths,
            slip,
            discount,
            horizon_cap,
        } => {
            let mut spec = GateGridSpec::standard(*grid_size, widths, real(*slip))?;
            spec.discount = real(*discount);
            spec.horizon_cap = *horizon_cap;
            if let Some(row) = wall_row {
                spec.wall_row = *row;
            }
            make_gate_grid(spec)
        }
        _ => Err(Error::Config("not a gate_grid env".into())),
    }
}

/// Runs the full experiment described by the config and writes
/// `metrics.csv`, `selections.csv`, and one SVG chart per metric into the
/// output directory.
pub fn run_experiment<R: Real>(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("[experiment] missing required key 'out_dir'".into()))?;
    let outputs = match &cfg.env {
        EnvSpecConfig::GateGrid { .. } => {
            let mdp = build_grid::<R>(&cfg.env)?;
            let space = mdp.task_space().to_vec();
            let target = resolve_grid_target(&cfg.target, &mdp)?;
            match cfg.features {
                FeatureChoice::GateRelative => {
                    let phi = crate::envs::gate_grid::GateRelativeFeatures::new(&mdp);
                    run_seeds(cfg, &mdp, &phi, &space, &target)?
                }
                FeatureChoice::ContextAffine => {
                    let phi = ContextAffineFeatures::from_task_space(
                        mdp.n_states(),
                        mdp.n_actions(),
                        &space,
                    );
                    run_seeds(cfg, &mdp, &phi, &space, &target)?
                }
                FeatureChoice::SharedTabular => {
                    let phi = TabularSharedFeatures {
                        n_states: mdp.n_states(),
                        n_actions: mdp.n_actions(),
                    };
                    run_seeds(cfg, &mdp, &phi, &space, &target)?
                }
                FeatureChoice::PerContextTabular => {
                    let phi = TabularPerContextFeatures {
                        n_states: mdp.n_states(),
                        n_contexts: space.len(),
                        n_actions: mdp.n_actions(),
                    };
                    run_seeds(cfg, &mdp, &phi, &space, &target)?
                }
            }
        }
        EnvSpecConfig::Bandit {
            dim,
            n_contexts,
            scheme,
        } => {
            // The bandit instance is part of the environment definition, so
            // its draws come from a fixed stream rather than the run seeds.
            let mut env_rng = stream_rng(0, Stream::EnvBuild);
            let (mdp, spec) = make_bandit::<R, _>(*dim, *n_contexts, *scheme, &mut env_rng)?;
            let phi = BanditFeatures::from_spec(&spec);
            let target = resolve_bandit_target(&cfg.target, *n_contexts)?;
            run_seeds(cfg, &mdp, &phi, &spec.contexts, &target)?
        }
    };
    write_outputs(&out_dir, &outputs)
}

/// Writes the per-seed outputs as CSVs plus charts; rows appear in seed
/// order regardless of execution order.
pub fn write_outputs<R: Real>(out_dir: &Path, outputs: &[SeedOutput<R>]) -> Result<RunOutputs> {
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let selections_path = out_dir.join("selections.csv");

    let mut metrics = Vec::new();
    writeln!(&mut metrics, "{METRICS_HEADER}")?;
    for seed_out in outputs {
        for m in &seed_out.metrics {
            writeln!(
                &mut metrics,
                "{},{},{},{},{},{}",
                m.seed,
                m.env_steps,
                m.mean_target_return,
                m.mean_distance_to_target,
                m.strategy,
                m.wall_time_ms
            )?;
        }
    }
    std::fs::write(&metrics_path, metrics)?;

    let mut selections = Vec::new();
    writeln!(&mut selections, "{SELECTIONS_HEADER}")?;
    for seed_out in outputs {
        for s in &seed_out.selections {
            writeln!(
                &mut selections,
                "{},{},{},{},{},{}",
                s.step,
                s.strategy,
                s.chosen_context_id,
                s.paired_target_id,
                s.score,
                s.distance_to_target
            )?;
        }
    }
    std::fs::write(&selections_path, selections)?;

    let chart_paths = chart::emit_charts(
        &[metrics_path.clone()],
        &ChartOptions {
            out_dir: out_dir.to_path_buf(),
            smooth_window: 2,
        },
    )?;
    Ok(RunOutputs {
        metrics_path,
        selections_path,
        chart_paths,
    })
}
