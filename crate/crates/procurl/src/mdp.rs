//! Contextual multi-task abstraction: tasks (contexts), per-task MDP
//! dynamics, trajectory rollouts, and the sampled task pools the teacher
//! selects from.
//!
//! A *task space* is an ordered list of [`Context`]s whose `id` equals their
//! position. Every task shares state/action spaces and the discount; the
//! dynamics, rewards, and initial distribution vary with the context.

use crate::error::{Error, Result};
use crate::num::{prob_tol, real, Real};
use rand::Rng;
use std::io::{self, Write};

/// One task: an index into its task space plus the feature vector used for
/// task-similarity computations.
#[derive(Clone, Debug, PartialEq)]
pub struct Context<R: Real> {
    pub id: usize,
    pub features: Vec<R>,
}

impl<R: Real> Context<R> {
    pub fn new(id: usize, features: Vec<R>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Config(format!("context {id}: empty feature vector")));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config(format!("context {id}: non-finite feature")));
        }
        Ok(Self { id, features })
    }

    /// Euclidean distance between feature vectors.
    pub fn distance(&self, other: &Self) -> R {
        debug_assert_eq!(self.features.len(), other.features.len());
        self.features
            .iter()
            .zip(other.features.iter())
            .fold(R::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt()
    }
}

/// Checks a task space: non-empty, consistent feature dimension, ids equal to
/// positions.
pub fn validate_task_space<R: Real>(space: &[Context<R>]) -> Result<()> {
    if space.is_empty() {
        return Err(Error::Config("empty task space".into()));
    }
    let dim = space[0].features.len();
    for (i, c) in space.iter().enumerate() {
        if c.id != i {
            return Err(Error::Config(format!(
                "task space: context at position {i} has id {}",
                c.id
            )));
        }
        if c.features.len() != dim {
            return Err(Error::Config(format!(
                "task space: context {i} has feature dim {} (expected {dim})",
                c.features.len()
            )));
        }
    }
    Ok(())
}

/// Per-context MDP family: shared discrete state/action spaces and discount,
/// context-dependent dynamics, rewards, and initial distribution.
pub trait ContextualMdp<R: Real> {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Discount factor in `[0, 1)`.
    fn discount(&self) -> R;
    /// Hard episode-length cap; rollouts and exact evaluation both honor it.
    fn horizon_cap(&self) -> usize;
    /// Bound on `|reward|`.
    fn r_max(&self) -> R;
    /// Probability vector over next states for `(context, state, action)`.
    fn transition(&self, c: &Context<R>, s: usize, a: usize) -> Vec<R>;
    fn reward(&self, c: &Context<R>, s: usize, a: usize) -> R;
    /// Probability vector over initial states.
    fn initial_dist(&self, c: &Context<R>) -> Vec<R>;
    fn terminal(&self, s: usize) -> bool;
}

/// Anything that yields action probabilities for a `(state, context)` pair.
pub trait Policy<R: Real> {
    fn action_probs(&self, state: usize, c: &Context<R>) -> Vec<R>;
}

/// Uniform-random policy; handy baseline and test fixture.
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl<R: Real> Policy<R> for UniformPolicy {
    fn action_probs(&self, _state: usize, _c: &Context<R>) -> Vec<R> {
        vec![R::one() / real(self.n_actions as f64); self.n_actions]
    }
}

/// Limits for computations that enumerate an MDP exactly.
#[derive(Clone, Copy, Debug)]
pub struct ExactBudget {
    /// Cap on the `states * actions * horizon` product for dynamic-programming
    /// passes.
    pub max_dp_product: u64,
    /// Cap on the number of trajectories a full enumeration may emit.
    pub max_trajectories: u64,
}

impl Default for ExactBudget {
    fn default() -> Self {
        Self {
            max_dp_product: 2_000_000,
            max_trajectories: 200_000,
        }
    }
}

/// One context's dynamics flattened into sparse tables, validated on
/// construction. Exact evaluation and exact gradients run on this form.
#[derive(Clone, Debug)]
pub struct CompiledContext<R: Real> {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: R,
    pub horizon_cap: usize,
    /// `[s * n_actions + a]` -> sparse successor list `(state, prob)`.
    pub trans: Vec<Vec<(usize, R)>>,
    /// `[s * n_actions + a]` -> reward.
    pub rewards: Vec<R>,
    /// Sparse initial distribution.
    pub init: Vec<(usize, R)>,
    pub terminal: Vec<bool>,
}

impl<R: Real> CompiledContext<R> {
    pub fn new<M: ContextualMdp<R> + ?Sized>(mdp: &M, c: &Context<R>) -> Result<Self> {
        let n_states = mdp.n_states();
        let n_actions = mdp.n_actions();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("MDP with zero states or actions".into()));
        }
        let discount = mdp.discount();
        if !(discount >= R::zero() && discount < R::one()) {
            return Err(Error::Config(format!("discount {discount} outside [0, 1)")));
        }
        let tol = prob_tol::<R>();
        let r_max = mdp.r_max();
        let mut trans = Vec::with_capacity(n_states * n_actions);
        let mut rewards = Vec::with_capacity(n_states * n_actions);
        let terminal: Vec<bool> = (0..n_states).map(|s| mdp.terminal(s)).collect();
        for s in 0..n_states {
            for a in 0..n_actions {
                let dist = mdp.transition(c, s, a);
                trans.push(compile_dist(&dist, n_states, tol, || {
                    format!("transition(c={}, s={s}, a={a})", c.id)
                })?);
                let r = mdp.reward(c, s, a);
                if !r.is_finite() || r.abs() > r_max + tol {
                    return Err(Error::Config(format!(
                        "reward(c={}, s={s}, a={a}) = {r} outside [-{r_max}, {r_max}]",
                        c.id
                    )));
                }
                rewards.push(r);
            }
        }
        let init = compile_dist(&mdp.initial_dist(c), n_states, tol, || {
            format!("initial_dist(c={})", c.id)
        })?;
        Ok(Self {
            n_states,
            n_actions,
            discount,
            horizon_cap: mdp.horizon_cap(),
            trans,
            rewards,
            init,
            terminal,
        })
    }

    pub fn dp_product(&self) -> u64 {
        self.n_states as u64 * self.n_actions as u64 * self.horizon_cap as u64
    }

    pub fn check_dp_budget(&self, budget: &ExactBudget) -> Result<()> {
        let product = self.dp_product();
        if product > budget.max_dp_product {
            return Err(Error::Capability(format!(
                "state*action*horizon product {product} exceeds budget {}; \
                 use Monte-Carlo estimation instead (value_mc / sampled rollouts)",
                budget.max_dp_product
            )));
        }
        Ok(())
    }
}

fn compile_dist<R: Real>(
    dist: &[R],
    n_states: usize,
    tol: R,
    what: impl Fn() -> String,
) -> Result<Vec<(usize, R)>> {
    if dist.len() != n_states {
        return Err(Error::Config(format!(
            "{}: distribution has length {} (expected {n_states})",
            what(),
            dist.len()
        )));
    }
    let mut sum = R::zero();
    let mut sparse = Vec::new();
    for (s, &p) in dist.iter().enumerate() {
        if !p.is_finite() || p < -tol {
            return Err(Error::Config(format!("{}: invalid probability {p}", what())));
        }
        if p > R::zero() {
            sparse.push((s, p));
        }
        sum += p;
    }
    if (sum - R::one()).abs() > tol {
        return Err(Error::Config(format!(
            "{}: probabilities sum to {sum}, not 1",
            what()
        )));
    }
    Ok(sparse)
}

/// One `(state, action, reward)` step of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<R: Real> {
    pub state: usize,
    pub action: usize,
    pub reward: R,
}

/// A rollout with per-step discounted returns.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<R: Real> {
    pub context: Context<R>,
    pub steps: Vec<Step<R>>,
    /// `returns[t] = reward[t] + discount * returns[t + 1]`.
    pub returns: Vec<R>,
}

impl<R: Real> Trajectory<R> {
    pub fn from_steps(context: Context<R>, steps: Vec<Step<R>>, discount: R) -> Self {
        let mut returns = vec![R::zero(); steps.len()];
        let mut acc = R::zero();
        for (i, step) in steps.iter().enumerate().rev() {
            acc = step.reward + discount * acc;
            returns[i] = acc;
        }
        Self {
            context,
            steps,
            returns,
        }
    }

    pub fn context_id(&self) -> usize {
        self.context.id
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Discounted return from the first step (zero for an empty rollout).
    pub fn total_return(&self) -> R {
        self.returns.first().copied().unwrap_or_else(R::zero)
    }
}

/// Samples an index from a dense probability vector.
pub fn sample_dense<R: Real, G: Rng + ?Sized>(probs: &[R], rng: &mut G) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p.to_f64().unwrap_or(0.0);
        if u < acc {
            return i;
        }
    }
    // Rounding leftovers land on the last supported index.
    probs
        .iter()
        .rposition(|&p| p > R::zero())
        .unwrap_or(probs.len() - 1)
}

/// Samples an index from a sparse `(index, prob)` list.
pub fn sample_sparse<R: Real, G: Rng + ?Sized>(pairs: &[(usize, R)], rng: &mut G) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in pairs {
        acc += p.to_f64().unwrap_or(0.0);
        if u < acc {
            return i;
        }
    }
    pairs.last().expect("empty distribution").0
}

/// Samples one episode: `s0 ~ initial_dist`, `a ~ policy`, `s' ~ transition`,
/// stopping at a terminal state or at `horizon_cap` steps.
pub fn rollout<R, M, P, G>(mdp: &M, policy: &P, c: &Context<R>, rng: &mut G) -> Trajectory<R>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    P: Policy<R> + ?Sized,
    G: Rng + ?Sized,
{
    let mut state = sample_dense(&mdp.initial_dist(c), rng);
    let mut steps = Vec::new();
    while steps.len() < mdp.horizon_cap() && !mdp.terminal(state) {
        let probs = policy.action_probs(state, c);
        let action = sample_dense(&probs, rng);
        let reward = mdp.reward(c, state, action);
        let next = sample_dense(&mdp.transition(c, state, action), rng);
        steps.push(Step {
            state,
            action,
            reward,
        });
        state = next;
    }
    Trajectory::from_steps(c.clone(), steps, mdp.discount())
}

/// Enumerates every trajectory of `c` under `policy` together with its
/// probability. The expectation of any trajectory functional is the
/// probability-weighted sum over the result.
///
/// Branches over actions and stochastic successors at every step, so this is
/// only feasible on very small instances; the budget caps the number of
/// emitted trajectories.
pub fn enumerate_trajectories<R, M, P>(
    mdp: &M,
    policy: &P,
    c: &Context<R>,
    budget: &ExactBudget,
) -> Result<Vec<(Trajectory<R>, R)>>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    P: Policy<R> + ?Sized,
{
    let cc = CompiledContext::new(mdp, c)?;
    let mut out = Vec::new();
    let mut prefix: Vec<Step<R>> = Vec::new();
    for &(s0, p0) in cc.init.clone().iter() {
        enumerate_rec(&cc, policy, c, s0, p0, &mut prefix, &mut out, budget)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_rec<R, P>(
    cc: &CompiledContext<R>,
    policy: &P,
    c: &Context<R>,
    state: usize,
    prob: R,
    prefix: &mut Vec<Step<R>>,
    out: &mut Vec<(Trajectory<R>, R)>,
    budget: &ExactBudget,
) -> Result<()>
where
    R: Real,
    P: Policy<R> + ?Sized,
{
    if cc.terminal[state] || prefix.len() >= cc.horizon_cap {
        if out.len() as u64 >= budget.max_trajectories {
            return Err(Error::Capability(format!(
                "trajectory enumeration exceeds budget {}; \
                 use Monte-Carlo estimation instead (sampled rollouts)",
                budget.max_trajectories
            )));
        }
        out.push((
            Trajectory::from_steps(c.clone(), prefix.clone(), cc.discount),
            prob,
        ));
        return Ok(());
    }
    let probs = policy.action_probs(state, c);
    for (action, &pa) in probs.iter().enumerate() {
        if pa <= R::zero() {
            continue;
        }
        let reward = cc.rewards[state * cc.n_actions + action];
        for &(next, pt) in &cc.trans[state * cc.n_actions + action] {
            prefix.push(Step {
                state,
                action,
                reward,
            });
            enumerate_rec(cc, policy, c, next, prob * pa * pt, prefix, out, budget)?;
            prefix.pop();
        }
    }
    Ok(())
}

/// How the target pool is drawn from the task space.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    /// All mass on one task.
    PointMass { id: usize },
    /// Finite mixture over tasks, weights need not be normalized.
    Mixture { components: Vec<(usize, f64)> },
    /// Uniform over a subset of tasks.
    UniformSubset { ids: Vec<usize> },
}

impl TargetSpec {
    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        let check = |id: usize| {
            if id >= n_tasks {
                Err(Error::Config(format!(
                    "target spec references context {id}, task space has {n_tasks}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            TargetSpec::PointMass { id } => check(*id),
            TargetSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::Config("target mixture with no components".into()));
                }
                let mut total = 0.0;
                for &(id, w) in components {
                    check(id)?;
                    if !(w.is_finite() && w >= 0.0) {
                        return Err(Error::Config(format!(
                            "target mixture weight {w} for context {id}"
                        )));
                    }
                    total += w;
                }
                if total <= 0.0 {
                    return Err(Error::Config("target mixture weights sum to zero".into()));
                }
                Ok(())
            }
            TargetSpec::UniformSubset { ids } => {
                if ids.is_empty() {
                    return Err(Error::Config("target subset is empty".into()));
                }
                ids.iter().copied().try_for_each(check)
            }
        }
    }

    /// Draws one task according to the spec.
    pub fn sample<'a, R: Real, G: Rng + ?Sized>(
        &self,
        space: &'a [Context<R>],
        rng: &mut G,
    ) -> &'a Context<R> {
        match self {
            TargetSpec::PointMass { id } => &space[*id],
            TargetSpec::Mixture { components } => {
                let total: f64 = components.iter().map(|&(_, w)| w).sum();
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for &(id, w) in components {
                    acc += w;
                    if u < acc {
                        return &space[id];
                    }
                }
                &space[components.last().unwrap().0]
            }
            TargetSpec::UniformSubset { ids } => &space[ids[rng.random_range(0..ids.len())]],
        }
    }

    /// The distinct mode contexts with normalized weights.
    pub fn resolve<'a, R: Real>(
        &self,
        space: &'a [Context<R>],
    ) -> Result<Vec<(&'a Context<R>, R)>> {
        self.validate(space.len())?;
        Ok(match self {
            TargetSpec::PointMass { id } => vec![(&space[*id], R::one())],
            TargetSpec::Mixture { components } => {
                let total: f64 = components.iter().map(|&(_, w)| w).sum();
                components
                    .iter()
                    .map(|&(id, w)| (&space[id], real::<R>(w / total)))
                    .collect()
            }
            TargetSpec::UniformSubset { ids } => {
                let w = real::<R>(1.0 / ids.len() as f64);
                ids.iter().map(|&id| (&space[id], w)).collect()
            }
        })
    }
}

/// The two discrete pools the teacher scores: a uniform draw from the task
/// space and a draw from the target distribution, plus the target weights.
#[derive(Clone, Debug)]
pub struct TaskPools<R: Real> {
    pub unif_pool: Vec<Context<R>>,
    pub targ_pool: Vec<Context<R>>,
    /// Probability vector over `targ_pool` (the discretized target
    /// distribution).
    pub target_weights: Vec<R>,
}

impl<R: Real> TaskPools<R> {
    pub fn validate(&self) -> Result<()> {
        if self.unif_pool.is_empty() || self.targ_pool.is_empty() {
            return Err(Error::Config("task pools must be non-empty".into()));
        }
        if self.target_weights.len() != self.targ_pool.len() {
            return Err(Error::Config(
                "target_weights length differs from targ_pool".into(),
            ));
        }
        let sum: R = self.target_weights.iter().copied().sum();
        if (sum - R::one()).abs() > prob_tol::<R>() {
            return Err(Error::Config(format!(
                "target_weights sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Builds the teacher's pools: `n_unif` uniform draws (with replacement) from
/// the task space and `n_targ` draws from the target spec, with uniform
/// weights over the target draws. The uniform pool is drawn first.
pub fn build_pools<R: Real, G: Rng + ?Sized>(
    task_space: &[Context<R>],
    target: &TargetSpec,
    n_unif: usize,
    n_targ: usize,
    rng: &mut G,
) -> Result<TaskPools<R>> {
    validate_task_space(task_space)?;
    if n_unif == 0 || n_targ == 0 {
        return Err(Error::Config(format!(
            "pool sizes must be >= 1 (n_unif={n_unif}, n_targ={n_targ})"
        )));
    }
    target.validate(task_space.len())?;
    let unif_pool: Vec<Context<R>> = (0..n_unif)
        .map(|_| task_space[rng.random_range(0..task_space.len())].clone())
        .collect();
    let targ_pool: Vec<Context<R>> = (0..n_targ)
        .map(|_| target.sample(task_space, rng).clone())
        .collect();
    let w = R::one() / real(n_targ as f64);
    Ok(TaskPools {
        unif_pool,
        targ_pool,
        target_weights: vec![w; n_targ],
    })
}

/// Writes contexts in the line format `id,f1,f2,...,fd`.
pub fn write_contexts<R: Real, W: Write>(out: &mut W, contexts: &[Context<R>]) -> io::Result<()> {
    for c in contexts {
        write!(out, "{}", c.id)?;
        for f in &c.features {
            write!(out, ",{f}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses the line format written by [`write_contexts`].
pub fn read_contexts<R: Real>(input: &str) -> Result<Vec<Context<R>>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id: usize = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("context line {}: bad id", lineno + 1)))?;
        let features = parts
            .map(|p| {
                p.trim().parse::<f64>().map(real::<R>).map_err(|_| {
                    Error::Config(format!("context line {}: bad feature '{p}'", lineno + 1))
                })
            })
            .collect::<Result<Vec<R>>>()?;
        out.push(Context::new(id, features)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn space(n: usize) -> Vec<Context<f64>> {
        (0..n)
            .map(|i| Context::new(i, vec![i as f64]).unwrap())
            .collect()
    }

    #[test]
    fn point_mass_pool_is_constant() {
        let space = space(10);
        let target = TargetSpec::PointMass { id: 7 };
        let mut rng = stream_rng(1, Stream::Pools);
        let pools = build_pools(&space, &target, 5, 400, &mut rng).unwrap();
        assert_eq!(pools.targ_pool.len(), 400);
        assert!(pools.targ_pool.iter().all(|c| c.id == 7));
        pools.validate().unwrap();
    }

    #[test]
    fn zero_pool_size_is_config_error() {
        let space = space(3);
        let target = TargetSpec::PointMass { id: 0 };
        let mut rng = stream_rng(1, Stream::Pools);
        let err = build_pools(&space, &target, 0, 1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn empty_task_space_is_config_error() {
        let space: Vec<Context<f64>> = Vec::new();
        let target = TargetSpec::PointMass { id: 0 };
        let mut rng = stream_rng(1, Stream::Pools);
        assert!(matches!(
            build_pools(&space, &target, 1, 1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn target_out_of_range_is_config_error() {
        let space = space(3);
        let target = TargetSpec::Mixture {
            components: vec![(1, 0.5), (9, 0.5)],
        };
        let mut rng = stream_rng(1, Stream::Pools);
        assert!(matches!(
            build_pools(&space, &target, 1, 1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pools_reproducible_under_seed() {
        let space = space(12);
        let target = TargetSpec::UniformSubset { ids: vec![0, 3, 5] };
        let a = build_pools(&space, &target, 50, 20, &mut stream_rng(9, Stream::Pools)).unwrap();
        let b = build_pools(&space, &target, 50, 20, &mut stream_rng(9, Stream::Pools)).unwrap();
        let ids = |p: &TaskPools<f64>| -> Vec<usize> {
            p.unif_pool
                .iter()
                .chain(p.targ_pool.iter())
                .map(|c| c.id)
                .collect()
        };
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn returns_satisfy_backward_recursion() {
        let c = Context::new(0, vec![0.0]).unwrap();
        let steps: Vec<Step<f64>> = [0.5, -1.0, 2.0, 0.0]
            .iter()
            .map(|&r| Step {
                state: 0,
                action: 0,
                reward: r,
            })
            .collect();
        let traj = Trajectory::from_steps(c, steps, 0.9);
        for t in 0..traj.len() {
            let expected = if t + 1 < traj.len() {
                traj.steps[t].reward + 0.9 * traj.returns[t + 1]
            } else {
                traj.steps[t].reward
            };
            assert!((traj.returns[t] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn context_io_roundtrip() {
        let space = space(4);
        let mut buf = Vec::new();
        write_contexts(&mut buf, &space).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed: Vec<Context<f64>> = read_contexts(&text).unwrap();
        assert_eq!(parsed, space);
    }

    #[test]
    fn read_contexts_reports_line() {
        let err = read_contexts::<f64>("0,1.0\nx,2.0").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
