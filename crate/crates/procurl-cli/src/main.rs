//! `procurl` command line: run experiments from config files, merge metrics
//! into charts, and run the verification probes.

use clap::{Parser, Subcommand};
use procurl::chart::{emit_charts, ChartOptions};
use procurl::config::ExperimentConfig;
use procurl::envs::bandit::{make_bandit, BanditSpec, ReprScheme};
use procurl::error::{Error, Result};
use procurl::learner::{LearnerConfig, PolicyParams};
use procurl::num::real;
use procurl::rng::{stream_rng, Stream};
use procurl::run::run_experiment;
use procurl::verify::{
    alignment_identity_check, run_convergence_probe, taylor_gap, ProbeOptions, ProbeStrategy,
};
use procurl::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "procurl",
    about = "Curriculum experiment runner for contextual multi-task RL",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Override a config entry, e.g. --override teacher.beta=50 (repeatable).
        #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Merge one or more metrics.csv files into SVG charts.
    Chart {
        /// Input metrics files.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Output directory for the SVGs.
        #[arg(long)]
        out: PathBuf,
        /// Smoothing window in evaluation snapshots.
        #[arg(long, default_value_t = 2)]
        smooth: usize,
    },
    /// Run a verification probe and print a pass/fail summary.
    Verify {
        #[command(subcommand)]
        probe: Probe,
    },
}

#[derive(Subcommand)]
enum Probe {
    /// Check the closed-form product identity for gradient alignment on
    /// randomized bandit instances.
    Prop1 {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the first-order improvement prediction against the exact
    /// expected improvement across a learning-rate sweep.
    Taylor {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure suboptimality decay of the teacher-student loop on a
    /// clustered bandit.
    Convergence {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        /// gradient-align | iid | target | procurl-target-exact
        #[arg(long, default_value = "gradient-align")]
        strategy: String,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        /// Directory for the CSV report (trial,step,suboptimality).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, overrides } => {
            let cfg = ExperimentConfig::from_file(&config, &overrides)?;
            let outputs = run_experiment::<Scalar>(&cfg)?;
            println!("wrote {}", outputs.metrics_path.display());
            println!("wrote {}", outputs.selections_path.display());
            for p in outputs.chart_paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Chart { metrics, out, smooth } => {
            let written = emit_charts(
                &metrics,
                &ChartOptions {
                    out_dir: out,
                    smooth_window: smooth,
                },
            )?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Verify { probe } => match probe {
            Probe::Prop1 { trials, seed } => verify_identity(trials, seed),
            Probe::Taylor { trials, seed } => verify_taylor(trials, seed),
            Probe::Convergence {
                trials,
                seed,
                steps,
                strategy,
                learning_rate,
                out,
            } => verify_convergence(trials, seed, steps, &strategy, learning_rate, out),
        },
    }
}

fn random_params<G: Rng>(dim: usize, rng: &mut G) -> PolicyParams<Scalar> {
    PolicyParams((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

fn random_instance<G: Rng>(trial: usize, rng: &mut G) -> Result<BanditSpec<Scalar>> {
    let dim = [2usize, 4, 8][trial % 3];
    let scheme = match (trial / 3) % 3 {
        0 => ReprScheme::Orthogonal,
        1 => ReprScheme::RandomUnit,
        _ => ReprScheme::Clustered {
            k: 2,
            spread: 0.25,
        },
    };
    let n_contexts = dim.min(6);
    let (_, spec) = make_bandit::<Scalar, _>(dim, n_contexts, scheme, rng)?;
    Ok(spec)
}

fn verify_identity(trials: usize, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, Stream::EnvBuild);
    let mut max_rel = 0.0f64;
    for trial in 0..trials {
        let spec = random_instance(trial, &mut rng)?;
        let params = random_params(spec.dim, &mut rng);
        let i = rng.random_range(0..spec.contexts.len());
        let j = rng.random_range(0..spec.contexts.len());
        let out =
            alignment_identity_check(&params, &spec, &spec.contexts[i], &spec.contexts[j])?;
        max_rel = max_rel.max(out.rel_err);
    }
    println!("alignment identity over {trials} randomized instances: max relative error {max_rel:.3e}");
    if max_rel <= 1e-10 {
        println!("PASS (tolerance 1e-10)");
        Ok(())
    } else {
        println!("FAIL (tolerance 1e-10)");
        Err(Error::Numerical(format!(
            "identity violated: max relative error {max_rel:.3e}"
        )))
    }
}

fn verify_taylor(trials: usize, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, Stream::EnvBuild);
    let etas = [1e-1f64, 1e-2, 1e-3];
    let budget = procurl::mdp::ExactBudget::default();
    let mut slopes = Vec::with_capacity(trials);
    let mut sign_mismatch = 0usize;
    for _ in 0..trials {
        let (mdp, spec) = make_bandit::<Scalar, _>(4, 4, ReprScheme::RandomUnit, &mut rng)?;
        let phi = procurl::envs::bandit::BanditFeatures::from_spec(&spec);
        let params = random_params(spec.dim, &mut rng);
        let c = &spec.contexts[0];
        let c_targ = &spec.contexts[1];
        let mut pts = Vec::new();
        for &eta in &etas {
            let cfg = LearnerConfig {
                learning_rate: real(eta),
                discount: 0.0,
            };
            let gap = taylor_gap(&params, &mdp, &phi, &cfg, c, c_targ, &budget)?;
            if eta <= 1e-3
                && gap.linear_prediction != 0.0
                && gap.exact_improvement.signum() != gap.linear_prediction.signum()
            {
                sign_mismatch += 1;
            }
            if gap.gap() > 0.0 {
                pts.push((eta.ln(), gap.gap().ln()));
            }
        }
        if pts.len() == etas.len() {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            slopes.push(sxy / sxx);
        }
    }
    let mean_slope = slopes.iter().sum::<f64>() / slopes.len().max(1) as f64;
    println!(
        "improvement gap scaling over {} instances: mean log-log slope {mean_slope:.3} (expect ~2), sign mismatches at eta<=1e-3: {sign_mismatch}",
        slopes.len()
    );
    if (mean_slope - 2.0).abs() <= 0.3 && sign_mismatch == 0 {
        println!("PASS (slope within 2 +/- 0.3, signs agree at small learning rates)");
        Ok(())
    } else {
        println!("FAIL");
        Err(Error::Numerical(format!(
            "first-order prediction quality off: slope {mean_slope:.3}, sign mismatches {sign_mismatch}"
        )))
    }
}

fn verify_convergence(
    trials: usize,
    seed: u64,
    steps: usize,
    strategy: &str,
    learning_rate: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let strategy: ProbeStrategy = strategy.parse()?;
    let mut env_rng = stream_rng(seed, Stream::EnvBuild);
    let (mdp, spec) = make_bandit::<Scalar, _>(
        8,
        10,
        ReprScheme::Clustered { k: 3, spread: 0.1 },
        &mut env_rng,
    )?;
    let c_targ = spec.contexts[0].clone();
    let cfg = LearnerConfig {
        learning_rate: real(learning_rate),
        discount: 0.0,
    };
    let opts = ProbeOptions {
        max_steps: steps,
        n_trials: trials,
        ..ProbeOptions::default()
    };
    let mut rng = stream_rng(seed, Stream::Init);
    let report = run_convergence_probe(&mdp, &spec, &c_targ, strategy, &cfg, &opts, &mut rng)?;
    print!("{}", report.summary());
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("convergence.csv");
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        std::fs::write(&path, buf)?;
        println!("wrote {}", path.display());
    }
    if strategy == ProbeStrategy::GradientAlign {
        let reached = report
            .steps_to_epsilon
            .iter()
            .any(|&(eps, step)| eps == 0.05 && step.is_some());
        let fit_ok = report
            .fit
            .as_ref()
            .map(|f| f.slope < 0.0 && f.r_squared > 0.8)
            .unwrap_or(false);
        if reached && fit_ok {
            println!("PASS (reached 0.05, negative log-linear slope with r^2 > 0.8)");
            Ok(())
        } else {
            println!("FAIL");
            Err(Error::Numerical(
                "gradient-aligned selection did not show geometric decay".into(),
            ))
        }
    } else {
        Ok(())
    }
}
