//! Two-action contextual bandit with one non-terminal state.
//!
//! Every context has an optimal action worth reward 1 and a non-optimal
//! action worth 0, so the policy's value on a task is exactly its probability
//! of picking the optimal action. Each context carries a representation
//! vector; the feature map places that vector on the optimal action and zero
//! on the other, which makes inner products of representation vectors encode
//! task correlation. This is the instance family on which the product-score
//! selection rule is an exact identity, so the verification suite leans on
//! it heavily.

use crate::error::{Error, Result};
use crate::learner::FeatureMap;
use crate::mdp::{Context, ContextualMdp};
use crate::num::{dot, real, Real};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// How per-context representation vectors are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReprScheme {
    /// `repr(i) = e_i`; requires `dim >= n_contexts`. Distinct tasks are
    /// exactly uncorrelated.
    Orthogonal,
    /// Independent uniform draws on the unit sphere.
    RandomUnit,
    /// `k` cluster centers on the unit sphere; context `i` gets center
    /// `i % k` plus per-coordinate Gaussian noise of the given spread, then
    /// is re-normalized. Spread 0 makes within-cluster similarity exactly 1.
    Clustered { k: usize, spread: f64 },
}

/// A bandit family: contexts, representation vectors, optimal actions.
#[derive(Clone, Debug)]
pub struct BanditSpec<R: Real> {
    pub contexts: Vec<Context<R>>,
    /// Per-context representation vector (also the context features).
    pub reprs: Vec<Vec<R>>,
    /// Per-context optimal action index (0 or 1).
    pub optimal_action: Vec<usize>,
    pub dim: usize,
}

impl<R: Real> BanditSpec<R> {
    /// Inner product of two contexts' representation vectors.
    pub fn repr_inner(&self, i: usize, j: usize) -> R {
        dot(&self.reprs[i], &self.reprs[j])
    }
}

/// The bandit MDP: state 0 is the only decision point, every action leads to
/// the terminal state 1.
#[derive(Clone, Debug)]
pub struct BanditMdp<R: Real> {
    optimal_action: Vec<usize>,
    _marker: std::marker::PhantomData<R>,
}

impl<R: Real> BanditMdp<R> {
    pub fn from_spec(spec: &BanditSpec<R>) -> Self {
        Self {
            optimal_action: spec.optimal_action.clone(),
            _marker: std::marker::PhantomData,
        }
    }
}

impl<R: Real> ContextualMdp<R> for BanditMdp<R> {
    fn n_states(&self) -> usize {
        2
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn discount(&self) -> R {
        R::zero()
    }
    fn horizon_cap(&self) -> usize {
        1
    }
    fn r_max(&self) -> R {
        R::one()
    }
    fn transition(&self, _c: &Context<R>, _s: usize, _a: usize) -> Vec<R> {
        vec![R::zero(), R::one()]
    }
    fn reward(&self, c: &Context<R>, s: usize, a: usize) -> R {
        if s == 0 && a == self.optimal_action[c.id] {
            R::one()
        } else {
            R::zero()
        }
    }
    fn initial_dist(&self, _c: &Context<R>) -> Vec<R> {
        vec![R::one(), R::zero()]
    }
    fn terminal(&self, s: usize) -> bool {
        s == 1
    }
}

/// Feature map placing the context's representation vector on its optimal
/// action and zero on the other, so the per-context feature difference is the
/// representation vector itself.
#[derive(Clone, Debug)]
pub struct BanditFeatures<R: Real> {
    reprs: Vec<Vec<R>>,
    optimal_action: Vec<usize>,
    dim: usize,
}

impl<R: Real> BanditFeatures<R> {
    pub fn from_spec(spec: &BanditSpec<R>) -> Self {
        Self {
            reprs: spec.reprs.clone(),
            optimal_action: spec.optimal_action.clone(),
            dim: spec.dim,
        }
    }
}

impl<R: Real> FeatureMap<R> for BanditFeatures<R> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn features(&self, s: usize, c: &Context<R>, a: usize) -> Vec<R> {
        if s == 0 && a == self.optimal_action[c.id] {
            self.reprs[c.id].clone()
        } else {
            vec![R::zero(); self.dim]
        }
    }

    fn dot(&self, theta: &[R], s: usize, c: &Context<R>, a: usize) -> R {
        if s == 0 && a == self.optimal_action[c.id] {
            dot(theta, &self.reprs[c.id])
        } else {
            R::zero()
        }
    }

    fn accumulate(&self, out: &mut [R], scale: R, s: usize, c: &Context<R>, a: usize) {
        if s == 0 && a == self.optimal_action[c.id] {
            crate::num::axpy(out, scale, &self.reprs[c.id]);
        }
    }
}

fn unit_gaussian<R: Real, G: Rng + ?Sized>(dim: usize, rng: &mut G) -> Vec<R> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| real(x / norm)).collect();
        }
    }
}

fn normalize<R: Real>(mut v: Vec<R>) -> Option<Vec<R>> {
    let norm = crate::num::norm2(&v);
    if norm <= real(1e-9) {
        return None;
    }
    for x in v.iter_mut() {
        *x = *x / norm;
    }
    Some(v)
}

/// Builds a bandit family with representation vectors drawn per the scheme
/// and a random optimal action per context.
pub fn make_bandit<R: Real, G: Rng + ?Sized>(
    dim: usize,
    n_contexts: usize,
    scheme: ReprScheme,
    rng: &mut G,
) -> Result<(BanditMdp<R>, BanditSpec<R>)> {
    if dim == 0 || n_contexts == 0 {
        return Err(Error::Config(format!(
            "bandit needs dim >= 1 and n_contexts >= 1 (got {dim}, {n_contexts})"
        )));
    }
    let reprs: Vec<Vec<R>> = match scheme {
        ReprScheme::Orthogonal => {
            if dim < n_contexts {
                return Err(Error::Config(format!(
                    "orthogonal scheme needs dim >= n_contexts ({dim} < {n_contexts})"
                )));
            }
            (0..n_contexts)
                .map(|i| {
                    let mut v = vec![R::zero(); dim];
                    v[i] = R::one();
                    v
                })
                .collect()
        }
        ReprScheme::RandomUnit => (0..n_contexts).map(|_| unit_gaussian(dim, rng)).collect(),
        ReprScheme::Clustered { k, spread } => {
            if k == 0 {
                return Err(Error::Config("clustered scheme needs k >= 1".into()));
            }
            if !(spread.is_finite() && spread >= 0.0) {
                return Err(Error::Config(format!("invalid cluster spread {spread}")));
            }
            let centers: Vec<Vec<R>> = (0..k).map(|_| unit_gaussian(dim, rng)).collect();
            (0..n_contexts)
                .map(|i| loop {
                    let mut v = centers[i % k].clone();
                    for x in v.iter_mut() {
                        let noise: f64 = StandardNormal.sample(rng);
                        *x += real(noise * spread);
                    }
                    if let Some(unit) = normalize(v) {
                        break unit;
                    }
                })
                .collect()
        }
    };
    let optimal_action: Vec<usize> = (0..n_contexts).map(|_| rng.random_range(0..2)).collect();
    let contexts = reprs
        .iter()
        .enumerate()
        .map(|(i, r)| Context::new(i, r.clone()))
        .collect::<Result<Vec<_>>>()?;
    let spec = BanditSpec {
        contexts,
        reprs,
        optimal_action,
        dim,
    };
    let mdp = BanditMdp::from_spec(&spec);
    Ok((mdp, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{policy_probs, PolicyParams, SoftmaxPolicy};
    use crate::num::norm2;
    use crate::rng::{stream_rng, Stream};
    use crate::value::value_exact;
    use approx::assert_relative_eq;

    #[test]
    fn orthogonal_reprs_are_orthonormal() {
        let mut rng = stream_rng(1, Stream::EnvBuild);
        let (_, spec) = make_bandit::<f64, _>(4, 4, ReprScheme::Orthogonal, &mut rng).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_eq!(spec.repr_inner(i, j), expected);
            }
        }
    }

    #[test]
    fn orthogonal_needs_enough_dims() {
        let mut rng = stream_rng(1, Stream::EnvBuild);
        assert!(make_bandit::<f64, _>(2, 4, ReprScheme::Orthogonal, &mut rng).is_err());
    }

    #[test]
    fn random_unit_reprs_have_unit_norm() {
        let mut rng = stream_rng(2, Stream::EnvBuild);
        let (_, spec) = make_bandit::<f64, _>(6, 10, ReprScheme::RandomUnit, &mut rng).unwrap();
        for r in &spec.reprs {
            assert_relative_eq!(norm2(r), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_spread_clusters_are_identical() {
        let mut rng = stream_rng(3, Stream::EnvBuild);
        let (_, spec) = make_bandit::<f64, _>(
            5,
            6,
            ReprScheme::Clustered { k: 2, spread: 0.0 },
            &mut rng,
        )
        .unwrap();
        // Contexts 0, 2, 4 share cluster 0; 1, 3, 5 share cluster 1.
        assert_relative_eq!(spec.repr_inner(0, 2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(spec.repr_inner(1, 5), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn value_equals_optimal_action_probability() {
        let mut rng = stream_rng(4, Stream::EnvBuild);
        let (mdp, spec) =
            make_bandit::<f64, _>(3, 5, ReprScheme::RandomUnit, &mut rng).unwrap();
        let phi = BanditFeatures::from_spec(&spec);
        let params = PolicyParams(vec![0.3, -0.7, 0.2]);
        for c in &spec.contexts {
            let p = policy_probs(&params, &phi, 0, c)[spec.optimal_action[c.id]];
            let v = value_exact(&mdp, &SoftmaxPolicy::new(&params, &phi), c).unwrap();
            assert_relative_eq!(v, p, epsilon = 1e-14);
        }
    }

    #[test]
    fn bandit_rollout_has_length_one() {
        let mut rng = stream_rng(5, Stream::EnvBuild);
        let (mdp, spec) =
            make_bandit::<f64, _>(3, 2, ReprScheme::RandomUnit, &mut rng).unwrap();
        let phi = BanditFeatures::from_spec(&spec);
        let params = PolicyParams::zeros(3);
        let policy = SoftmaxPolicy::new(&params, &phi);
        let mut roll_rng = stream_rng(5, Stream::Rollouts);
        let traj = crate::mdp::rollout(&mdp, &policy, &spec.contexts[0], &mut roll_rng);
        assert_eq!(traj.len(), 1);
    }
}
