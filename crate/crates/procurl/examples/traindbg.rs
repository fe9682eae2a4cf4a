//! Trains on the gate grid with a chosen strategy and prints per-context
//! values over time, for tuning the curriculum experiment.

use procurl::config::{ExperimentConfig, FeatureChoice};
use procurl::envs::gate_grid::{make_gate_grid, GateGridSpec};
use procurl::learner::*;
use procurl::mdp::*;
use procurl::rng::{stream_rng, Stream};
use procurl::teacher::*;
use procurl::value::*;
use rand::Rng as _;

fn main() {
    let mut args = std::env::args().skip(1);
    let strat: String = args.next().unwrap_or_else(|| "iid".into());
    let lr: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(5.0);
    let total: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(40_000);
    let beta: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(130.0);
    let horizon: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(50);
    let feat: String = args.next().unwrap_or_else(|| "context-affine".into());
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1);

    let widths = vec![1, 3, 5, 7, 9, 11];
    let mut spec = GateGridSpec::standard(11, &widths, 0.05).unwrap();
    spec.horizon_cap = horizon;
    let mdp = make_gate_grid(spec).unwrap();
    let space = mdp.task_space().to_vec();
    let target_id = match mdp.target_spec_library()[0].1 {
        TargetSpec::PointMass { id } => id,
        _ => unreachable!(),
    };
    let target = TargetSpec::PointMass { id: target_id };

    let _ = (ExperimentConfig::from_text("", &[]), FeatureChoice::ContextAffine);
    let phi: Box<dyn FeatureMap<f64>> = match feat.as_str() {
        "shared-tabular" => Box::new(TabularSharedFeatures {
            n_states: mdp.n_states(),
            n_actions: 4,
        }),
        "gate-relative" => Box::new(procurl::envs::gate_grid::GateRelativeFeatures::new(&mdp)),
        _ => Box::new(ContextAffineFeatures::from_task_space(
            mdp.n_states(),
            4,
            &space,
        )),
    };
    let phi = &*phi;
    let strategy: Strategy = strat.parse().unwrap();
    let teacher_cfg = TeacherConfig {
        strategy,
        beta,
        kernel: SimilarityKernel::NegExpDistance,
    };
    let learner_cfg = LearnerConfig {
        learning_rate: lr,
        discount: 0.99,
    };
    let mut pools_rng = stream_rng(seed, Stream::Pools);
    let mut teacher_rng = stream_rng(seed, Stream::Teacher);
    let mut roll_rng = stream_rng(seed, Stream::Rollouts);
    let mut eval_rng = stream_rng(seed, Stream::Eval);
    let pools = build_pools(&space, &target, 2000, 400, &mut pools_rng).unwrap();
    let mut params = PolicyParams::<f64>::zeros(phi.dim());
    let mut table = ValueTable::new(1.0).unwrap();
    refresh_values(
        &mut table, &mdp, &SoftmaxPolicy::new(&params, phi), &pools, EvalMode::Exact, true, 0,
        &mut eval_rng,
    )
    .unwrap();

    let mut env_steps = 0u64;
    let mut last_refresh = 0u64;
    let mut last_print = 0u64;
    let mut sel_counts = vec![0usize; space.len()];
    while env_steps < total {
        let chosen = match strategy {
            Strategy::ProcurlTarget => {
                select_softmax_pair(&table, &pools, &teacher_cfg, &mut teacher_rng)
                    .unwrap()
                    .task
            }
            Strategy::ProcurlUnif => {
                select_procurl_unif(&table, &pools, &teacher_cfg, &mut teacher_rng)
                    .unwrap()
                    .0
            }
            Strategy::Iid | Strategy::Target => {
                select_baseline(&pools, strategy, &mut teacher_rng).unwrap()
            }
            _ => unreachable!(),
        };
        sel_counts[chosen.id] += 1;
        let traj = rollout(&mdp, &SoftmaxPolicy::new(&params, phi), &chosen, &mut roll_rng);
        env_steps += traj.len() as u64;
        params = reinforce_update(&params, &traj, phi, &learner_cfg).unwrap();
        if env_steps - last_refresh >= 2000 {
            refresh_values(
                &mut table, &mdp, &SoftmaxPolicy::new(&params, phi), &pools, EvalMode::Exact,
                true, env_steps, &mut eval_rng,
            )
            .unwrap();
            last_refresh = env_steps;
        }
        if env_steps - last_print >= 5000 {
            last_print = env_steps;
            let policy = SoftmaxPolicy::new(&params, phi);
            let vt = value_exact(&mdp, &policy, &space[target_id]).unwrap();
            let mut vals: Vec<(i64, i64, f64)> = space
                .iter()
                .map(|c| {
                    (
                        c.features[0] as i64,
                        c.features[1] as i64,
                        value_exact(&mdp, &policy, c).unwrap(),
                    )
                })
                .collect();
            vals.sort_by_key(|&(p, w, _)| (w, p));
            print!("steps {env_steps:>6}  V(targ)={vt:.4}  ");
            let refs = [
                (0i64, 11i64),
                (0, 5),
                (2, 5),
                (3, 5),
                (3, 3),
                (4, 3),
                (4, 1),
                (5, 1),
            ];
            let shown: Vec<String> = vals
                .iter()
                .filter(|&&(p, w, _)| refs.contains(&(p, w)))
                .map(|&(p, w, v)| format!("({p},{w})={v:.3}"))
                .collect();
            let n_solved = vals.iter().filter(|&&(_, _, v)| v > 0.3).count();
            println!("n>0.3: {n_solved}  {}", shown.join(" "));
        }
    }
    let _ = rollout(&mdp, &UniformPolicy { n_actions: 4 }, &space[0], &mut roll_rng);
    println!("selection counts by (pos,width):");
    let mut pairs: Vec<(i64, i64, usize)> = space
        .iter()
        .map(|c| (c.features[0] as i64, c.features[1] as i64, sel_counts[c.id]))
        .collect();
    pairs.sort_by_key(|&(p, w, _)| (w, p));
    for (p, w, n) in pairs {
        if n > 0 {
            print!("({p},{w})={n} ");
        }
    }
    println!();
    let _ = pools_rng.random_range(0..2usize);
}
