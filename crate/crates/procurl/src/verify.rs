//! Executable checks for the theory behind the curriculum rule: the
//! closed-form alignment identity on the bandit, the quality of the
//! first-order improvement approximation, and the geometric decay of target
//! suboptimality under gradient-aligned task selection.

use crate::envs::bandit::{BanditFeatures, BanditMdp, BanditSpec};
use crate::error::{Error, Result};
use crate::learner::{
    expected_policy_gradient, reinforce_update, FeatureMap, LearnerConfig, PolicyParams,
    SoftmaxPolicy,
};
use crate::mdp::{rollout, Context, ContextualMdp, ExactBudget};
use crate::num::{axpy, dot, real, Real};
use crate::teacher::{select_gradient_align, select_procurl_exact, SimilarityKernel};
use crate::value::{optimal_value, value_exact};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{self, Write};

/// Both sides of the bandit alignment identity
/// `<g(c), g(c_targ)> = Z(c) * Z(c_targ) * <repr(c), repr(c_targ)>`.
#[derive(Clone, Copy, Debug)]
pub struct AlignmentIdentity<R: Real> {
    /// Inner product of exact policy gradients.
    pub lhs: R,
    /// Product of learning potentials and representation inner product.
    pub rhs: R,
    pub rel_err: R,
}

/// Evaluates the alignment identity on one bandit instance: the left side by
/// exact gradient computation, the right side from values and representation
/// vectors alone.
pub fn alignment_identity_check<R: Real>(
    params: &PolicyParams<R>,
    spec: &BanditSpec<R>,
    c: &Context<R>,
    c_targ: &Context<R>,
) -> Result<AlignmentIdentity<R>> {
    let mdp = BanditMdp::from_spec(spec);
    let phi = BanditFeatures::from_spec(spec);
    let budget = ExactBudget::default();
    let g_c = expected_policy_gradient(params, &mdp, &phi, c, &budget)?;
    let g_t = expected_policy_gradient(params, &mdp, &phi, c_targ, &budget)?;
    let lhs = dot(&g_c, &g_t);

    let policy = SoftmaxPolicy::new(params, &phi);
    // On this family V*(c) = 1, so Z(c) = V(c) * (1 - V(c)).
    let z = |ctx: &Context<R>| -> Result<R> {
        let v = value_exact(&mdp, &policy, ctx)?;
        Ok(v * (R::one() - v))
    };
    let rhs = z(c)? * z(c_targ)? * spec.repr_inner(c.id, c_targ.id);
    let denom = lhs.abs().max(real(1e-300));
    Ok(AlignmentIdentity {
        lhs,
        rhs,
        rel_err: (lhs - rhs).abs() / denom,
    })
}

/// Exact vs first-order predicted improvement of the target value when
/// training one step on task `c`.
#[derive(Clone, Copy, Debug)]
pub struct TaylorGap<R: Real> {
    /// `E over rollouts of c [ V_{theta'}(c_targ) ] - V_theta(c_targ)`,
    /// by full rollout enumeration.
    pub exact_improvement: R,
    /// `eta * <g(c), g(c_targ)>`.
    pub linear_prediction: R,
}

impl<R: Real> TaylorGap<R> {
    pub fn gap(&self) -> R {
        (self.exact_improvement - self.linear_prediction).abs()
    }
}

/// Measures how well the linearized improvement predicts the true expected
/// improvement; the gap shrinks as `O(eta^2)`.
pub fn taylor_gap<R, M, F>(
    params: &PolicyParams<R>,
    mdp: &M,
    phi: &F,
    cfg: &LearnerConfig<R>,
    c: &Context<R>,
    c_targ: &Context<R>,
    budget: &ExactBudget,
) -> Result<TaylorGap<R>>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    F: FeatureMap<R> + ?Sized,
{
    let policy = SoftmaxPolicy::new(params, phi);
    let base = value_exact(mdp, &policy, c_targ)?;
    let trajectories = crate::mdp::enumerate_trajectories(mdp, &policy, c, budget)?;
    let mut expected = R::zero();
    for (traj, prob) in &trajectories {
        let updated = reinforce_update(params, traj, phi, cfg)?;
        let policy_after = SoftmaxPolicy::new(&updated, phi);
        expected += *prob * value_exact(mdp, &policy_after, c_targ)?;
    }
    let g_c = expected_policy_gradient(params, mdp, phi, c, budget)?;
    let g_t = expected_policy_gradient(params, mdp, phi, c_targ, budget)?;
    Ok(TaylorGap {
        exact_improvement: expected - base,
        linear_prediction: cfg.learning_rate * dot(&g_c, &g_t),
    })
}

/// Task-selection rules the convergence probe can drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeStrategy {
    GradientAlign,
    Iid,
    Target,
    /// Exact argmax of the product score with true per-task optimal values.
    ProcurlTargetExact,
}

impl std::str::FromStr for ProbeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient-align" => Ok(ProbeStrategy::GradientAlign),
            "iid" => Ok(ProbeStrategy::Iid),
            "target" => Ok(ProbeStrategy::Target),
            "procurl-target-exact" => Ok(ProbeStrategy::ProcurlTargetExact),
            other => Err(Error::Config(format!("unknown probe strategy '{other}'"))),
        }
    }
}

/// How the probe applies the learner update each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeUpdate {
    /// `theta += eta * g(c_t)`: the expectation of the learner update, which
    /// removes Monte-Carlo noise from rate fits.
    ExactExpected,
    /// One sampled rollout fed through the learner update.
    Sampled,
}

/// Initial parameter draw for each trial.
#[derive(Clone, Copy, Debug)]
pub enum ProbeInit {
    /// `theta0 = -scale * repr(c_targ)`: the agent starts bad at the target
    /// and everything correlated with it.
    Adverse { scale: f64 },
    /// `theta0 = +scale * repr(c_targ)`: already near-optimal on the target.
    Optimal { scale: f64 },
    /// I.i.d. Gaussian entries.
    Gaussian { scale: f64 },
}

#[derive(Clone, Debug)]
pub struct ProbeOptions<R: Real> {
    pub max_steps: usize,
    pub n_trials: usize,
    pub update: ProbeUpdate,
    pub init: ProbeInit,
    /// Per-coordinate Gaussian jitter added to every trial's initial
    /// parameters.
    pub init_noise: f64,
    /// Suboptimality floor; the log-linear fit uses steps with mean
    /// suboptimality above `10 * epsilon_floor`.
    pub epsilon_floor: R,
    /// Thresholds reported as steps-to-epsilon.
    pub epsilons: Vec<R>,
}

impl<R: Real> Default for ProbeOptions<R> {
    fn default() -> Self {
        Self {
            max_steps: 400,
            n_trials: 100,
            update: ProbeUpdate::ExactExpected,
            init: ProbeInit::Adverse { scale: 2.2 },
            init_noise: 0.1,
            epsilon_floor: real(0.05),
            epsilons: vec![real(0.05)],
        }
    }
}

/// Least-squares line through `(t, log e_t)`.
#[derive(Clone, Copy, Debug)]
pub struct LogLinearFit<R: Real> {
    pub slope: R,
    pub intercept: R,
    pub r_squared: R,
    pub points: usize,
}

/// What one probe run measured.
#[derive(Clone, Debug)]
pub struct ConvergenceReport<R: Real> {
    /// Per-trial suboptimality curves, `trials[k][t]`.
    pub trials: Vec<Vec<R>>,
    /// Mean suboptimality per step.
    pub mean_subopt: Vec<R>,
    /// Fit of `log e_t` against `t` over the region above `10 * epsilon_floor`.
    pub fit: Option<LogLinearFit<R>>,
    /// First step at which the mean suboptimality drops to each threshold.
    pub steps_to_epsilon: Vec<(R, Option<usize>)>,
    /// Per-step improvement ratio `(e_t - e_{t+1}) / e_t` of the mean curve.
    pub improvement_ratio: Vec<R>,
    /// Per-step regression amount `max(0, e_{t+1} - e_t)` of the mean curve.
    pub regression_offset: Vec<R>,
}

impl<R: Real> ConvergenceReport<R> {
    /// CSV dump, one row per (trial, step).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "trial,step,suboptimality")?;
        for (k, curve) in self.trials.iter().enumerate() {
            for (t, e) in curve.iter().enumerate() {
                writeln!(out, "{k},{t},{e}")?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "trials: {}, steps: {}\n",
            self.trials.len(),
            self.mean_subopt.len().saturating_sub(1)
        ));
        s.push_str(&format!(
            "mean suboptimality: start {}, end {}\n",
            self.mean_subopt.first().copied().unwrap_or_else(R::zero),
            self.mean_subopt.last().copied().unwrap_or_else(R::zero)
        ));
        match &self.fit {
            Some(fit) => s.push_str(&format!(
                "log-linear fit over {} points: slope {}, r^2 {}\n",
                fit.points, fit.slope, fit.r_squared
            )),
            None => s.push_str("log-linear fit: not enough points above the floor\n"),
        }
        for (eps, step) in &self.steps_to_epsilon {
            match step {
                Some(t) => s.push_str(&format!("steps to {eps}: {t}\n")),
                None => s.push_str(&format!("steps to {eps}: not reached\n")),
            }
        }
        s
    }
}

fn fit_log_linear<R: Real>(curve: &[R], floor: R) -> Option<LogLinearFit<R>> {
    let pts: Vec<(R, R)> = curve
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > floor)
        .map(|(t, &e)| (real(t as f64), e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = real::<R>(pts.len() as f64);
    let sx: R = pts.iter().map(|&(x, _)| x).sum();
    let sy: R = pts.iter().map(|&(_, y)| y).sum();
    let (mx, my) = (sx / n, sy / n);
    let mut sxx = R::zero();
    let mut sxy = R::zero();
    let mut syy = R::zero();
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == R::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == R::zero() {
        R::one()
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Some(LogLinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: pts.len(),
    })
}

fn draw_init<R: Real, G: Rng + ?Sized>(
    init: ProbeInit,
    noise: f64,
    targ_repr: &[R],
    dim: usize,
    rng: &mut G,
) -> PolicyParams<R> {
    let mut theta = vec![R::zero(); dim];
    match init {
        ProbeInit::Adverse { scale } => axpy(&mut theta, real(-scale), targ_repr),
        ProbeInit::Optimal { scale } => axpy(&mut theta, real(scale), targ_repr),
        ProbeInit::Gaussian { scale } => {
            for x in theta.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x = real(z * scale);
            }
        }
    }
    if noise > 0.0 {
        for x in theta.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += real(z * noise);
        }
    }
    PolicyParams(theta)
}

/// Runs the teacher-student loop on a bandit family for `n_trials`
/// independent trials and records the suboptimality
/// `e_t = V*(c_targ) - V_theta_t(c_targ)` at every step.
pub fn run_convergence_probe<R: Real, G: Rng + ?Sized>(
    mdp: &BanditMdp<R>,
    spec: &BanditSpec<R>,
    c_targ: &Context<R>,
    strategy: ProbeStrategy,
    cfg: &LearnerConfig<R>,
    opts: &ProbeOptions<R>,
    rng: &mut G,
) -> Result<ConvergenceReport<R>> {
    cfg.validate()?;
    if opts.n_trials == 0 || opts.max_steps == 0 {
        return Err(Error::Config("probe needs n_trials >= 1 and max_steps >= 1".into()));
    }
    let phi = BanditFeatures::from_spec(spec);
    let budget = ExactBudget::default();
    let candidates = &spec.contexts;
    let v_star = optimal_value(mdp, c_targ)?;
    let neg_tol = real::<R>(-1e-9);

    let mut trials = Vec::with_capacity(opts.n_trials);
    for _ in 0..opts.n_trials {
        let mut params = draw_init(
            opts.init,
            opts.init_noise,
            &spec.reprs[c_targ.id],
            spec.dim,
            rng,
        );
        let mut curve = Vec::with_capacity(opts.max_steps + 1);
        for step in 0..=opts.max_steps {
            let policy = SoftmaxPolicy::new(&params, &phi);
            let e = v_star - value_exact(mdp, &policy, c_targ)?;
            if e < neg_tol {
                return Err(Error::Numerical(format!(
                    "negative suboptimality {e} at step {step}"
                )));
            }
            curve.push(e.max(R::zero()));
            if step == opts.max_steps {
                break;
            }
            let chosen: Context<R> = match strategy {
                ProbeStrategy::GradientAlign => {
                    select_gradient_align(&params, mdp, &phi, candidates, c_targ, &budget)?.0
                }
                ProbeStrategy::Iid => candidates[rng.random_range(0..candidates.len())].clone(),
                ProbeStrategy::Target => c_targ.clone(),
                ProbeStrategy::ProcurlTargetExact => {
                    let value_of = |c: &Context<R>| {
                        value_exact(mdp, &SoftmaxPolicy::new(&params, &phi), c)
                    };
                    let optimal_of = |c: &Context<R>| optimal_value(mdp, c);
                    select_procurl_exact(
                        &value_of,
                        &optimal_of,
                        candidates,
                        c_targ,
                        SimilarityKernel::InnerProduct,
                    )?
                    .0
                }
            };
            params = match opts.update {
                ProbeUpdate::ExactExpected => {
                    let g = expected_policy_gradient(&params, mdp, &phi, &chosen, &budget)?;
                    let mut next = params.0.clone();
                    axpy(&mut next, cfg.learning_rate, &g);
                    let next = PolicyParams(next);
                    if !next.is_finite() {
                        return Err(Error::Numerical(
                            "expected update produced non-finite parameters".into(),
                        ));
                    }
                    next
                }
                ProbeUpdate::Sampled => {
                    let policy = SoftmaxPolicy::new(&params, &phi);
                    let traj = rollout(mdp, &policy, &chosen, rng);
                    reinforce_update(&params, &traj, &phi, cfg)?
                }
            };
        }
        trials.push(curve);
    }

    let steps = opts.max_steps + 1;
    let mut mean_subopt = vec![R::zero(); steps];
    for curve in &trials {
        for (t, &e) in curve.iter().enumerate() {
            mean_subopt[t] += e;
        }
    }
    let n = real::<R>(opts.n_trials as f64);
    for e in mean_subopt.iter_mut() {
        *e = *e / n;
    }

    let fit = fit_log_linear(&mean_subopt, opts.epsilon_floor * real(10.0));
    let steps_to_epsilon = opts
        .epsilons
        .iter()
        .map(|&eps| (eps, mean_subopt.iter().position(|&e| e <= eps)))
        .collect();
    let mut improvement_ratio = Vec::with_capacity(steps.saturating_sub(1));
    let mut regression_offset = Vec::with_capacity(steps.saturating_sub(1));
    for t in 0..steps - 1 {
        let (e0, e1) = (mean_subopt[t], mean_subopt[t + 1]);
        improvement_ratio.push(if e0 > R::zero() { (e0 - e1) / e0 } else { R::zero() });
        regression_offset.push((e1 - e0).max(R::zero()));
    }
    Ok(ConvergenceReport {
        trials,
        mean_subopt,
        fit,
        steps_to_epsilon,
        improvement_ratio,
        regression_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::bandit::{make_bandit, ReprScheme};
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;

    #[test]
    fn identity_at_zero_params_on_shared_repr() {
        // Two contexts with identical representations; theta = 0 gives
        // p = 1/2, so both sides equal (1/4)^2.
        let mut rng = stream_rng(1, Stream::EnvBuild);
        let (_, mut spec) =
            make_bandit::<f64, _>(3, 2, ReprScheme::Clustered { k: 1, spread: 0.0 }, &mut rng)
                .unwrap();
        // Same optimal action so the instance is fully symmetric.
        spec.optimal_action = vec![0, 0];
        let params = PolicyParams::zeros(3);
        let out = alignment_identity_check(
            &params,
            &spec,
            &spec.contexts[0],
            &spec.contexts[1],
        )
        .unwrap();
        assert_relative_eq!(out.lhs, 0.0625, epsilon = 1e-12);
        assert_relative_eq!(out.rhs, 0.0625, epsilon = 1e-12);
        assert!(out.rel_err <= 1e-10);
    }

    #[test]
    fn identity_zero_for_orthogonal_tasks() {
        let mut rng = stream_rng(2, Stream::EnvBuild);
        let (_, spec) =
            make_bandit::<f64, _>(4, 4, ReprScheme::Orthogonal, &mut rng).unwrap();
        let params = PolicyParams(vec![0.4, -0.2, 0.9, 0.0]);
        let out = alignment_identity_check(
            &params,
            &spec,
            &spec.contexts[0],
            &spec.contexts[2],
        )
        .unwrap();
        assert_eq!(out.lhs, 0.0);
        assert_eq!(out.rhs, 0.0);
    }

    #[test]
    fn taylor_terms_vanish_at_zero_learning_rate() {
        let mut rng = stream_rng(3, Stream::EnvBuild);
        let (mdp, spec) =
            make_bandit::<f64, _>(3, 3, ReprScheme::RandomUnit, &mut rng).unwrap();
        let phi = BanditFeatures::from_spec(&spec);
        let params = PolicyParams(vec![0.1, 0.2, -0.3]);
        let cfg = LearnerConfig {
            learning_rate: 0.0,
            discount: 0.0,
        };
        let out = taylor_gap(
            &params,
            &mdp,
            &phi,
            &cfg,
            &spec.contexts[0],
            &spec.contexts[1],
            &ExactBudget::default(),
        )
        .unwrap();
        assert_eq!(out.exact_improvement, 0.0);
        assert_eq!(out.linear_prediction, 0.0);
    }

    #[test]
    fn optimal_init_is_already_converged() {
        let mut rng = stream_rng(4, Stream::EnvBuild);
        let (mdp, spec) = make_bandit::<f64, _>(
            4,
            6,
            ReprScheme::Clustered { k: 2, spread: 0.1 },
            &mut rng,
        )
        .unwrap();
        let c_targ = spec.contexts[0].clone();
        let cfg = LearnerConfig {
            learning_rate: 0.5,
            discount: 0.0,
        };
        let opts = ProbeOptions {
            max_steps: 3,
            n_trials: 5,
            init: ProbeInit::Optimal { scale: 30.0 },
            init_noise: 0.0,
            ..ProbeOptions::default()
        };
        let mut probe_rng = stream_rng(4, Stream::Init);
        let report = run_convergence_probe(
            &mdp,
            &spec,
            &c_targ,
            ProbeStrategy::Target,
            &cfg,
            &opts,
            &mut probe_rng,
        )
        .unwrap();
        assert!(report.mean_subopt[0] <= 1e-9, "e0={}", report.mean_subopt[0]);
    }

    #[test]
    fn fit_recovers_exact_geometric_decay() {
        let curve: Vec<f64> = (0..30).map(|t| 0.9f64.powi(t)).collect();
        let fit = fit_log_linear(&curve, 1e-6).unwrap();
        assert_relative_eq!(fit.slope, 0.9f64.ln(), epsilon = 1e-9);
        assert!(fit.r_squared > 0.999999);
    }
}
