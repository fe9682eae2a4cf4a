//! The student side: linear-softmax contextual policies, the score-function
//! policy-gradient update, and the exact expected gradient used by the
//! verification suite.
//!
//! Policies take the form `pi(a | s, c) = softmax_a <theta, phi(s, c, a)>`
//! for a feature map `phi`. The update applied after each rollout is
//!
//! ```text
//! theta' = theta + eta * sum_t G_t * (phi(s_t, c, a_t) - E_{a ~ pi}[phi(s_t, c, a)])
//! ```
//!
//! with `G_t` the discounted return from step `t`.

use crate::error::{Error, Result};
use crate::mdp::{CompiledContext, Context, ContextualMdp, ExactBudget, Policy, Trajectory};
use crate::num::{axpy, real, Real};

/// Feature map over `(state, context, action)` triples.
///
/// `dot` and `accumulate` have dense default implementations; tabular maps
/// override them with O(1) index arithmetic, which is what keeps rollouts and
/// updates cheap at one-hot dimensions in the tens of thousands.
pub trait FeatureMap<R: Real> {
    /// Output dimension, fixed across all inputs.
    fn dim(&self) -> usize;
    /// Number of actions the map is defined for.
    fn n_actions(&self) -> usize;
    /// Dense feature vector.
    fn features(&self, s: usize, c: &Context<R>, a: usize) -> Vec<R>;

    /// `<theta, phi(s, c, a)>`.
    fn dot(&self, theta: &[R], s: usize, c: &Context<R>, a: usize) -> R {
        crate::num::dot(theta, &self.features(s, c, a))
    }

    /// `out += scale * phi(s, c, a)`.
    fn accumulate(&self, out: &mut [R], scale: R, s: usize, c: &Context<R>, a: usize) {
        axpy(out, scale, &self.features(s, c, a));
    }

    /// Adds `value` to the logit of `action` uniformly across states and
    /// contexts, where the map supports it. Used to seed parameters with a
    /// directed exploration prior.
    fn add_uniform_action_bias(&self, _theta: &mut [R], _action: usize, _value: R) {}
}

/// One-hot features over `(state, context, action)`: a separate logit per
/// triple, so there is no transfer between contexts. Exact-gradient checks
/// use this map.
#[derive(Clone, Debug)]
pub struct TabularPerContextFeatures {
    pub n_states: usize,
    pub n_contexts: usize,
    pub n_actions: usize,
}

impl TabularPerContextFeatures {
    pub fn dim(&self) -> usize {
        self.n_states * self.n_contexts * self.n_actions
    }

    fn index(&self, s: usize, c: usize, a: usize) -> usize {
        (s * self.n_contexts + c) * self.n_actions + a
    }
}

impl<R: Real> FeatureMap<R> for TabularPerContextFeatures {
    fn dim(&self) -> usize {
        TabularPerContextFeatures::dim(self)
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn features(&self, s: usize, c: &Context<R>, a: usize) -> Vec<R> {
        let mut v = vec![R::zero(); TabularPerContextFeatures::dim(self)];
        v[self.index(s, c.id, a)] = R::one();
        v
    }

    fn dot(&self, theta: &[R], s: usize, c: &Context<R>, a: usize) -> R {
        theta[self.index(s, c.id, a)]
    }

    fn accumulate(&self, out: &mut [R], scale: R, s: usize, c: &Context<R>, a: usize) {
        out[self.index(s, c.id, a)] += scale;
    }

    fn add_uniform_action_bias(&self, theta: &mut [R], action: usize, value: R) {
        for s in 0..self.n_states {
            for c in 0..self.n_contexts {
                theta[self.index(s, c, action)] += value;
            }
        }
    }
}

/// One-hot features over `(state, action)` shared by every context: training
/// on one task moves the policy on all tasks. Curriculum experiments use this
/// map.
#[derive(Clone, Debug)]
pub struct TabularSharedFeatures {
    pub n_states: usize,
    pub n_actions: usize,
}

impl TabularSharedFeatures {
    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }
}

impl<R: Real> FeatureMap<R> for TabularSharedFeatures {
    fn dim(&self) -> usize {
        TabularSharedFeatures::dim(self)
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn features(&self, s: usize, _c: &Context<R>, a: usize) -> Vec<R> {
        let mut v = vec![R::zero(); self.n_states * self.n_actions];
        v[s * self.n_actions + a] = R::one();
        v
    }

    fn dot(&self, theta: &[R], s: usize, _c: &Context<R>, a: usize) -> R {
        theta[s * self.n_actions + a]
    }

    fn accumulate(&self, out: &mut [R], scale: R, s: usize, _c: &Context<R>, a: usize) {
        out[s * self.n_actions + a] += scale;
    }

    fn add_uniform_action_bias(&self, theta: &mut [R], action: usize, value: R) {
        for s in 0..self.n_states {
            theta[s * self.n_actions + action] += value;
        }
    }
}

/// One-hot `(state, action)` features augmented with affine context terms:
/// the logit of `(s, a)` is a base weight plus weights on the scaled context
/// features. Behavior therefore generalizes linearly across tasks, which is
/// what lets training on tasks near a target move the policy on the target
/// itself.
#[derive(Clone, Debug)]
pub struct ContextAffineFeatures<R: Real> {
    pub n_states: usize,
    pub n_actions: usize,
    /// Per-dimension scale applied to raw context features (typically
    /// 1 / max-abs over the task space).
    pub feature_scale: Vec<R>,
}

impl<R: Real> ContextAffineFeatures<R> {
    /// Scales each context dimension by the inverse of its largest magnitude
    /// over the task space.
    pub fn from_task_space(n_states: usize, n_actions: usize, space: &[Context<R>]) -> Self {
        let k = space.first().map(|c| c.features.len()).unwrap_or(0);
        let mut scale = vec![R::one(); k];
        for (dim, s) in scale.iter_mut().enumerate() {
            let max_abs = space
                .iter()
                .map(|c| c.features[dim].abs())
                .fold(R::zero(), |a, b| a.max(b));
            if max_abs > R::zero() {
                *s = R::one() / max_abs;
            }
        }
        Self {
            n_states,
            n_actions,
            feature_scale: scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions * (1 + self.feature_scale.len())
    }

    fn base(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * (1 + self.feature_scale.len())
    }
}

impl<R: Real> FeatureMap<R> for ContextAffineFeatures<R> {
    fn dim(&self) -> usize {
        ContextAffineFeatures::dim(self)
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn features(&self, s: usize, c: &Context<R>, a: usize) -> Vec<R> {
        let mut v = vec![R::zero(); ContextAffineFeatures::dim(self)];
        let base = self.base(s, a);
        v[base] = R::one();
        for (k, &scale) in self.feature_scale.iter().enumerate() {
            v[base + 1 + k] = c.features[k] * scale;
        }
        v
    }

    fn dot(&self, theta: &[R], s: usize, c: &Context<R>, a: usize) -> R {
        let base = self.base(s, a);
        let mut out = theta[base];
        for (k, &scale) in self.feature_scale.iter().enumerate() {
            out += theta[base + 1 + k] * c.features[k] * scale;
        }
        out
    }

    fn accumulate(&self, out: &mut [R], scale_by: R, s: usize, c: &Context<R>, a: usize) {
        let base = self.base(s, a);
        out[base] += scale_by;
        for (k, &scale) in self.feature_scale.iter().enumerate() {
            out[base + 1 + k] += scale_by * c.features[k] * scale;
        }
    }

    fn add_uniform_action_bias(&self, theta: &mut [R], action: usize, value: R) {
        for s in 0..self.n_states {
            theta[self.base(s, action)] += value;
        }
    }
}

/// Policy parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<R: Real>(pub Vec<R>);

impl<R: Real> PolicyParams<R> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![R::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Flat text form: one line, space-separated values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&format!("{v}"));
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map(real::<R>)
                    .map_err(|_| Error::Config(format!("bad parameter value '{tok}'")))
            })
            .collect::<Result<Vec<R>>>()?;
        if values.is_empty() {
            return Err(Error::Config("empty parameter text".into()));
        }
        Ok(Self(values))
    }
}

/// Learner hyperparameters. The learning rate is constant across a run.
#[derive(Clone, Copy, Debug)]
pub struct LearnerConfig<R: Real> {
    pub learning_rate: R,
    pub discount: R,
}

impl<R: Real> LearnerConfig<R> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= R::zero()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if !(self.discount >= R::zero() && self.discount < R::one()) {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        Ok(())
    }
}

/// Softmax action distribution from logits `<theta, phi(s, c, a)>`, computed
/// with max-subtraction so raw logits are never exponentiated.
pub fn policy_probs<R: Real, F: FeatureMap<R> + ?Sized>(
    params: &PolicyParams<R>,
    phi: &F,
    s: usize,
    c: &Context<R>,
) -> Vec<R> {
    let n = phi.n_actions();
    let mut logits: Vec<R> = (0..n).map(|a| phi.dot(&params.0, s, c, a)).collect();
    let max = logits
        .iter()
        .copied()
        .fold(R::neg_infinity(), |m, x| m.max(x));
    let mut total = R::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l = *l / total;
    }
    logits
}

/// Borrowing view that makes `(params, phi)` usable wherever a [`Policy`] is
/// expected.
pub struct SoftmaxPolicy<'a, R: Real, F: FeatureMap<R> + ?Sized> {
    pub params: &'a PolicyParams<R>,
    pub phi: &'a F,
}

impl<'a, R: Real, F: FeatureMap<R> + ?Sized> SoftmaxPolicy<'a, R, F> {
    pub fn new(params: &'a PolicyParams<R>, phi: &'a F) -> Self {
        Self { params, phi }
    }
}

impl<R: Real, F: FeatureMap<R> + ?Sized> Policy<R> for SoftmaxPolicy<'_, R, F> {
    fn action_probs(&self, state: usize, c: &Context<R>) -> Vec<R> {
        policy_probs(self.params, self.phi, state, c)
    }
}

/// Accumulates one trajectory's score-function sum
/// `sum_t G_t * (phi(s_t, c, a_t) - E_pi[phi])` into `delta`.
/// Action probabilities are taken at the *given* parameters for every step.
fn accumulate_score_sum<R: Real, F: FeatureMap<R> + ?Sized>(
    params: &PolicyParams<R>,
    traj: &Trajectory<R>,
    phi: &F,
    delta: &mut [R],
) -> Result<()> {
    let c = &traj.context;
    for (t, step) in traj.steps.iter().enumerate() {
        let g = traj.returns[t];
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite return {g} at step {t} of rollout on context {}",
                c.id
            )));
        }
        if g == R::zero() {
            continue;
        }
        phi.accumulate(delta, g, step.state, c, step.action);
        let probs = policy_probs(params, phi, step.state, c);
        for (a, &p) in probs.iter().enumerate() {
            phi.accumulate(delta, -g * p, step.state, c, a);
        }
    }
    Ok(())
}

/// One policy-gradient step from a single rollout:
/// `theta' = theta + eta * sum_t G_t * grad log pi(a_t | s_t, c)`.
pub fn reinforce_update<R: Real, F: FeatureMap<R> + ?Sized>(
    params: &PolicyParams<R>,
    traj: &Trajectory<R>,
    phi: &F,
    cfg: &LearnerConfig<R>,
) -> Result<PolicyParams<R>> {
    reinforce_update_batch(params, std::slice::from_ref(traj), phi, cfg)
}

/// Same update averaged over a batch of rollouts.
pub fn reinforce_update_batch<R: Real, F: FeatureMap<R> + ?Sized>(
    params: &PolicyParams<R>,
    batch: &[Trajectory<R>],
    phi: &F,
    cfg: &LearnerConfig<R>,
) -> Result<PolicyParams<R>> {
    if batch.is_empty() {
        return Err(Error::Config("empty rollout batch".into()));
    }
    let mut delta = vec![R::zero(); phi.dim()];
    for traj in batch {
        accumulate_score_sum(params, traj, phi, &mut delta)?;
    }
    let scale = cfg.learning_rate / real(batch.len() as f64);
    let mut next = params.0.clone();
    axpy(&mut next, scale, &delta);
    let next = PolicyParams(next);
    if !next.is_finite() {
        return Err(Error::Numerical(format!(
            "policy update produced non-finite parameters (context {})",
            batch[0].context.id
        )));
    }
    Ok(next)
}

/// Exact policy gradient `grad_theta V(c)` under the horizon-capped value,
/// computed by backward induction over time. The recursion sums the same
/// quantity as enumerating every trajectory weighted by its probability.
///
/// With `V_t(s) = sum_a pi_a * q_a` and `q_a = r(s,a) + gamma * E[V_{t+1}]`:
///
/// ```text
/// grad V_t(s) = sum_a pi_a * (q_a - V_t(s)) * phi(s, c, a)
///             + gamma * sum_a pi_a * E_{s'|s,a}[grad V_{t+1}(s')]
/// ```
pub fn expected_policy_gradient<R, M, F>(
    params: &PolicyParams<R>,
    mdp: &M,
    phi: &F,
    c: &Context<R>,
    budget: &ExactBudget,
) -> Result<Vec<R>>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    F: FeatureMap<R> + ?Sized,
{
    let cc = CompiledContext::new(mdp, c)?;
    cc.check_dp_budget(budget)?;
    let d = phi.dim();
    let (n_states, n_actions) = (cc.n_states, cc.n_actions);
    let probs: Vec<Vec<R>> = (0..n_states)
        .map(|s| {
            if cc.terminal[s] {
                Vec::new()
            } else {
                policy_probs(params, phi, s, c)
            }
        })
        .collect();
    let mut v_next = vec![R::zero(); n_states];
    let mut v_cur = vec![R::zero(); n_states];
    let mut g_next = vec![R::zero(); n_states * d];
    let mut g_cur = vec![R::zero(); n_states * d];
    let mut q = vec![R::zero(); n_actions];
    for _ in 0..cc.horizon_cap {
        for s in 0..n_states {
            if cc.terminal[s] {
                v_cur[s] = R::zero();
                g_cur[s * d..(s + 1) * d].fill(R::zero());
                continue;
            }
            let pr = &probs[s];
            let mut v_s = R::zero();
            for a in 0..n_actions {
                let mut qa = cc.rewards[s * n_actions + a];
                for &(next, p) in &cc.trans[s * n_actions + a] {
                    qa += cc.discount * p * v_next[next];
                }
                q[a] = qa;
                v_s += pr[a] * qa;
            }
            v_cur[s] = v_s;
            let gs = &mut g_cur[s * d..(s + 1) * d];
            gs.fill(R::zero());
            for a in 0..n_actions {
                phi.accumulate(gs, pr[a] * (q[a] - v_s), s, c, a);
            }
            // Split borrows: gs aliases g_cur, flow reads g_next.
            for a in 0..n_actions {
                for &(next, p) in &cc.trans[s * n_actions + a] {
                    let w = cc.discount * pr[a] * p;
                    let src_from = next * d;
                    for i in 0..d {
                        g_cur[s * d + i] += w * g_next[src_from + i];
                    }
                }
            }
        }
        std::mem::swap(&mut v_cur, &mut v_next);
        std::mem::swap(&mut g_cur, &mut g_next);
    }
    let mut out = vec![R::zero(); d];
    for &(s0, p0) in &cc.init {
        axpy(&mut out, p0, &g_next[s0 * d..(s0 + 1) * d]);
    }
    Ok(out)
}

/// Monte-Carlo estimate of the policy gradient: the mean score-function sum
/// over `n` sampled rollouts. This is the fallback when the exact computation
/// exceeds its budget.
pub fn monte_carlo_policy_gradient<R, M, F, G>(
    params: &PolicyParams<R>,
    mdp: &M,
    phi: &F,
    c: &Context<R>,
    n_rollouts: usize,
    rng: &mut G,
) -> Result<Vec<R>>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    F: FeatureMap<R> + ?Sized,
    G: rand::Rng + ?Sized,
{
    if n_rollouts == 0 {
        return Err(Error::Config("n_rollouts must be >= 1".into()));
    }
    let mut mean = vec![R::zero(); phi.dim()];
    let policy = SoftmaxPolicy::new(params, phi);
    let mut delta = vec![R::zero(); phi.dim()];
    for _ in 0..n_rollouts {
        let traj = crate::mdp::rollout(mdp, &policy, c, rng);
        delta.fill(R::zero());
        accumulate_score_sum(params, &traj, phi, &mut delta)?;
        axpy(&mut mean, R::one() / real(n_rollouts as f64), &delta);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct PairFeatures {
        // phi(s, c, a) = columns[a]
        columns: Vec<Vec<f64>>,
    }

    impl FeatureMap<f64> for PairFeatures {
        fn dim(&self) -> usize {
            self.columns[0].len()
        }
        fn n_actions(&self) -> usize {
            self.columns.len()
        }
        fn features(&self, _s: usize, _c: &Context<f64>, a: usize) -> Vec<f64> {
            self.columns[a].clone()
        }
    }

    fn ctx() -> Context<f64> {
        Context::new(0, vec![0.0]).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        let phi = PairFeatures {
            columns: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let params = PolicyParams::zeros(2);
        let p = policy_probs(&params, &phi, 0, &ctx());
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn logits_one_zero_match_closed_form() {
        let phi = PairFeatures {
            columns: vec![vec![1.0], vec![0.0]],
        };
        let params = PolicyParams(vec![1.0]);
        let p = policy_probs(&params, &phi, 0, &ctx());
        let e = std::f64::consts::E;
        assert_relative_eq!(p[0], e / (1.0 + e), epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0 / (1.0 + e), epsilon = 1e-12);
    }

    #[test]
    fn probs_invariant_to_logit_shift() {
        // Adding a shared component to every action's features shifts all
        // logits by a constant.
        let phi_a = PairFeatures {
            columns: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
        };
        let phi_b = PairFeatures {
            columns: vec![vec![1.0, 7.0], vec![0.0, 7.0]],
        };
        let params = PolicyParams(vec![0.6, 1.0]);
        let pa = policy_probs(&params, &phi_a, 0, &ctx());
        let pb = policy_probs(&params, &phi_b, 0, &ctx());
        assert_relative_eq!(pa[0], pb[0], epsilon = 1e-12);
    }

    #[test]
    fn zero_return_trajectory_leaves_params_unchanged() {
        let phi = PairFeatures {
            columns: vec![vec![1.0], vec![0.0]],
        };
        let params = PolicyParams(vec![0.3]);
        let c = ctx();
        let traj = Trajectory::from_steps(
            c,
            vec![crate::mdp::Step {
                state: 0,
                action: 0,
                reward: 0.0,
            }],
            0.9,
        );
        let cfg = LearnerConfig {
            learning_rate: 0.5,
            discount: 0.9,
        };
        let next = reinforce_update(&params, &traj, &phi, &cfg).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let phi = PairFeatures {
            columns: vec![vec![1.0], vec![0.0]],
        };
        let params = PolicyParams(vec![0.3]);
        let traj = Trajectory::from_steps(
            ctx(),
            vec![crate::mdp::Step {
                state: 0,
                action: 0,
                reward: 1.0,
            }],
            0.9,
        );
        let cfg = LearnerConfig {
            learning_rate: 0.0,
            discount: 0.9,
        };
        let next = reinforce_update(&params, &traj, &phi, &cfg).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn params_text_roundtrip() {
        let params = PolicyParams(vec![0.125, -3.5, 1e-9]);
        let text = params.to_text();
        let back = PolicyParams::<f64>::from_text(&text).unwrap();
        assert_eq!(back, params);
    }
}
