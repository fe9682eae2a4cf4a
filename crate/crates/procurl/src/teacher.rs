//! Task-selection strategies.
//!
//! The central rule scores a candidate task `c` against a target task
//! `c_targ` as the product of three terms: the learner's learning potential
//! on `c`, its learning potential on `c_targ`, and the similarity between the
//! two tasks. Learning potential `Z(c) = (V(c)/V*) * (V* - V(c))` peaks at
//! half-mastery and vanishes on tasks the learner has either fully mastered
//! or cannot touch yet, so the product steers training through tasks that are
//! currently learnable *and* pull toward the target.
//!
//! In the practical form the unknown `V*(c)` is replaced by a domain constant
//! `v_max`, scores are computed over two sampled pools, and the argmax is
//! relaxed to a softmax with inverse temperature `beta`. The exact argmax
//! form, a gradient-alignment rule, and a full one-step-improvement oracle
//! are kept for verification on small instances.

use crate::error::{Error, Result};
use crate::learner::{
    expected_policy_gradient, reinforce_update, FeatureMap, LearnerConfig, PolicyParams,
    SoftmaxPolicy,
};
use crate::mdp::{Context, ContextualMdp, ExactBudget, TaskPools};
use crate::num::{dot, real, Real};
use crate::value::{value_exact, ValueTable};
use rand::Rng;
use std::collections::BTreeMap;

/// Task-selection rule identifiers, as they appear in configs and logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    ProcurlTarget,
    ProcurlUnif,
    Iid,
    Target,
    GradientAlign,
    GreedyOracle,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ProcurlTarget => "procurl-target",
            Strategy::ProcurlUnif => "procurl-unif",
            Strategy::Iid => "iid",
            Strategy::Target => "target",
            Strategy::GradientAlign => "gradient-align",
            Strategy::GreedyOracle => "greedy-oracle",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procurl-target" => Ok(Strategy::ProcurlTarget),
            "procurl-unif" => Ok(Strategy::ProcurlUnif),
            "iid" => Ok(Strategy::Iid),
            "target" => Ok(Strategy::Target),
            "gradient-align" => Ok(Strategy::GradientAlign),
            "greedy-oracle" => Ok(Strategy::GreedyOracle),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Task-similarity kernel over context features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityKernel {
    /// `exp(-||f_c - f_t||_2)`: in `(0, 1]`, equal to 1 iff features match.
    NegExpDistance,
    /// Raw inner product of the feature vectors.
    InnerProduct,
}

impl SimilarityKernel {
    pub fn similarity<R: Real>(&self, a: &Context<R>, b: &Context<R>) -> R {
        match self {
            SimilarityKernel::NegExpDistance => (-a.distance(b)).exp(),
            SimilarityKernel::InnerProduct => dot(&a.features, &b.features),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimilarityKernel::NegExpDistance => "negative-exp-distance",
            SimilarityKernel::InnerProduct => "inner-product",
        }
    }
}

impl std::str::FromStr for SimilarityKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative-exp-distance" => Ok(SimilarityKernel::NegExpDistance),
            "inner-product" => Ok(SimilarityKernel::InnerProduct),
            other => Err(Error::Config(format!("unknown similarity kernel '{other}'"))),
        }
    }
}

/// Teacher hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TeacherConfig<R: Real> {
    pub strategy: Strategy,
    /// Softmax inverse temperature; 0 selects uniformly.
    pub beta: R,
    pub kernel: SimilarityKernel,
}

impl<R: Real> TeacherConfig<R> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= R::zero()) {
            return Err(Error::Config(format!(
                "beta {} must be finite and >= 0",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Learning potential `(v / v_max) * (v_max - v)`: zero at `v = 0` and
/// `v = v_max`, maximal `v_max / 4` at `v = v_max / 2`.
///
/// Callers must pass a value already clamped into `[0, v_max]`; anything else
/// is a bug upstream.
pub fn learning_potential<R: Real>(v: R, v_max: R) -> R {
    assert!(
        v_max > R::zero() && v >= R::zero() && v <= v_max,
        "learning_potential: v={v} outside [0, {v_max}]"
    );
    (v / v_max) * (v_max - v)
}

/// Product score of a candidate against a target: `z_c * z_targ * sim`.
pub fn procurl_score<R: Real>(z_c: R, z_targ: R, sim: R) -> R {
    z_c * z_targ * sim
}

/// A sampled `(target, task)` pair with its raw product score; the student
/// trains on `task`.
#[derive(Clone, Debug)]
pub struct PairChoice<R: Real> {
    pub target: Context<R>,
    pub task: Context<R>,
    pub score: R,
}

/// Deduplicates a pool by context id, keeping multiplicities. Ordered by id
/// so downstream iteration is deterministic.
fn dedup_pool<R: Real>(pool: &[Context<R>]) -> Vec<(&Context<R>, usize)> {
    let mut map: BTreeMap<usize, (&Context<R>, usize)> = BTreeMap::new();
    for c in pool {
        map.entry(c.id)
            .and_modify(|e| e.1 += 1)
            .or_insert((c, 1));
    }
    map.into_values().collect()
}

fn table_value<R: Real>(table: &ValueTable<R>, id: usize) -> Result<R> {
    table
        .get(id)
        .ok_or_else(|| Error::Config(format!("value table has no entry for context {id}")))
}

/// Samples index `i` with probability proportional to `exp(logits[i])`,
/// normalized via max-subtraction.
fn sample_softmax<R: Real, G: Rng + ?Sized>(logits: &[R], rng: &mut G) -> Result<usize> {
    let mut max = R::neg_infinity();
    for &l in logits {
        if !l.is_finite() {
            return Err(Error::Numerical(format!("non-finite selection logit {l}")));
        }
        max = max.max(l);
    }
    let weights: Vec<f64> = logits
        .iter()
        .map(|&l| (l - max).exp().to_f64().unwrap_or(0.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(weights.len() - 1)
}

/// Softmax selection of a `(target, task)` pair over the joint pool product.
///
/// The joint distribution is `P[(c_targ, c)] ∝ exp(beta * score(c_targ, c))`
/// over every pool pair. Pools are deduplicated by id before scoring and the
/// multiplicities folded back in as additive log terms, which leaves the
/// distribution unchanged while keeping the score matrix small.
pub fn select_softmax_pair<R: Real, G: Rng + ?Sized>(
    table: &ValueTable<R>,
    pools: &TaskPools<R>,
    cfg: &TeacherConfig<R>,
    rng: &mut G,
) -> Result<PairChoice<R>> {
    cfg.validate()?;
    pools.validate()?;
    let v_max = table.v_max();
    let targs = dedup_pool(&pools.targ_pool);
    let unifs = dedup_pool(&pools.unif_pool);
    let z_of = |id: usize| -> Result<R> {
        Ok(learning_potential(table_value(table, id)?, v_max))
    };
    let z_targ: Vec<R> = targs
        .iter()
        .map(|(c, _)| z_of(c.id))
        .collect::<Result<_>>()?;
    let z_unif: Vec<R> = unifs
        .iter()
        .map(|(c, _)| z_of(c.id))
        .collect::<Result<_>>()?;

    let mut logits = Vec::with_capacity(targs.len() * unifs.len());
    let mut scores = Vec::with_capacity(targs.len() * unifs.len());
    for (i, (ct, mult_t)) in targs.iter().enumerate() {
        let log_mult_t = real::<R>(*mult_t as f64).ln();
        for (j, (cu, mult_u)) in unifs.iter().enumerate() {
            let sim = cfg.kernel.similarity(cu, ct);
            let score = procurl_score(z_unif[j], z_targ[i], sim);
            if !score.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite pair score for (targ={}, task={})",
                    ct.id, cu.id
                )));
            }
            scores.push(score);
            logits.push(cfg.beta * score + log_mult_t + real::<R>(*mult_u as f64).ln());
        }
    }
    let k = sample_softmax(&logits, rng)?;
    let (ti, uj) = (k / unifs.len(), k % unifs.len());
    Ok(PairChoice {
        target: targs[ti].0.clone(),
        task: unifs[uj].0.clone(),
        score: scores[k],
    })
}

/// Softmax selection over the uniform pool by learning potential alone
/// (target-related terms dropped): `P[c] ∝ exp(beta * Z(c))`.
pub fn select_procurl_unif<R: Real, G: Rng + ?Sized>(
    table: &ValueTable<R>,
    pools: &TaskPools<R>,
    cfg: &TeacherConfig<R>,
    rng: &mut G,
) -> Result<(Context<R>, R)> {
    cfg.validate()?;
    pools.validate()?;
    let v_max = table.v_max();
    let unifs = dedup_pool(&pools.unif_pool);
    let mut logits = Vec::with_capacity(unifs.len());
    let mut potentials = Vec::with_capacity(unifs.len());
    for (c, mult) in &unifs {
        let z = learning_potential(table_value(table, c.id)?, v_max);
        if !z.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite learning potential for context {}",
                c.id
            )));
        }
        potentials.push(z);
        logits.push(cfg.beta * z + real::<R>(*mult as f64).ln());
    }
    let k = sample_softmax(&logits, rng)?;
    Ok((unifs[k].0.clone(), potentials[k]))
}

/// The two prototypical baselines: uniform over the uniform pool, or the
/// discretized target distribution.
pub fn select_baseline<R: Real, G: Rng + ?Sized>(
    pools: &TaskPools<R>,
    strategy: Strategy,
    rng: &mut G,
) -> Result<Context<R>> {
    pools.validate()?;
    match strategy {
        Strategy::Iid => {
            let k = rng.random_range(0..pools.unif_pool.len());
            Ok(pools.unif_pool[k].clone())
        }
        Strategy::Target => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, &w) in pools.targ_pool.iter().zip(pools.target_weights.iter()) {
                acc += w.to_f64().unwrap_or(0.0);
                if u < acc {
                    return Ok(c.clone());
                }
            }
            Ok(pools.targ_pool.last().unwrap().clone())
        }
        other => Err(Error::Config(format!(
            "select_baseline called with strategy {other}"
        ))),
    }
}

/// Argmax over candidates with deterministic ties: higher score wins, equal
/// scores go to the lower context id.
pub fn argmax_by_score<R: Real, T>(items: &[(T, R)], id_of: impl Fn(&T) -> usize) -> usize {
    debug_assert!(!items.is_empty());
    let mut best = 0usize;
    for i in 1..items.len() {
        let (score, id) = (items[i].1, id_of(&items[i].0));
        let (best_score, best_id) = (items[best].1, id_of(&items[best].0));
        if score > best_score || (score == best_score && id < best_id) {
            best = i;
        }
    }
    best
}

/// Gradient-alignment selection: the candidate whose exact policy gradient
/// has the largest inner product with the target task's gradient.
pub fn select_gradient_align<R, M, F>(
    params: &PolicyParams<R>,
    mdp: &M,
    phi: &F,
    candidates: &[Context<R>],
    c_targ: &Context<R>,
    budget: &ExactBudget,
) -> Result<(Context<R>, R)>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    F: FeatureMap<R> + ?Sized,
{
    if candidates.is_empty() {
        return Err(Error::Config("no candidates for gradient alignment".into()));
    }
    let g_targ = expected_policy_gradient(params, mdp, phi, c_targ, budget)?;
    let scored: Vec<(Context<R>, R)> = candidates
        .iter()
        .map(|c| {
            let g_c = expected_policy_gradient(params, mdp, phi, c, budget)?;
            Ok((c.clone(), dot(&g_c, &g_targ)))
        })
        .collect::<Result<_>>()?;
    let k = argmax_by_score(&scored, |c| c.id);
    Ok(scored[k].clone())
}

/// Exact argmax form of the product score, with true per-task `V*` supplied
/// by the caller. Used by verification probes and as a reference selector.
pub fn select_procurl_exact<R: Real>(
    value_of: &dyn Fn(&Context<R>) -> Result<R>,
    optimal_of: &dyn Fn(&Context<R>) -> Result<R>,
    candidates: &[Context<R>],
    c_targ: &Context<R>,
    kernel: SimilarityKernel,
) -> Result<(Context<R>, R)> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidates for exact selection".into()));
    }
    let z = |c: &Context<R>| -> Result<R> {
        let v_star = optimal_of(c)?;
        // Exact DP can overshoot V* by rounding; pin v into [0, V*].
        let v = value_of(c)?.max(R::zero()).min(v_star);
        Ok(learning_potential(v, v_star))
    };
    let z_targ = z(c_targ)?;
    let scored: Vec<(Context<R>, R)> = candidates
        .iter()
        .map(|c| {
            let score = procurl_score(z(c)?, z_targ, kernel.similarity(c, c_targ));
            Ok((c.clone(), score))
        })
        .collect::<Result<_>>()?;
    let k = argmax_by_score(&scored, |c| c.id);
    Ok(scored[k].clone())
}

/// Greedy one-step oracle: enumerates every rollout of each candidate,
/// applies the learner update to each, and picks the candidate whose expected
/// post-update value under the target distribution improves the most. Only
/// feasible on tiny instances; this is a test oracle, not a practical
/// teacher.
pub fn select_greedy_oracle<R, M, F>(
    params: &PolicyParams<R>,
    mdp: &M,
    phi: &F,
    cfg: &LearnerConfig<R>,
    candidates: &[Context<R>],
    targets: &[(&Context<R>, R)],
    budget: &ExactBudget,
) -> Result<(Context<R>, R)>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    F: FeatureMap<R> + ?Sized,
{
    if candidates.is_empty() || targets.is_empty() {
        return Err(Error::Config("greedy oracle needs candidates and targets".into()));
    }
    let value_under = |p: &PolicyParams<R>| -> Result<R> {
        let policy = SoftmaxPolicy::new(p, phi);
        let mut total = R::zero();
        for &(ct, w) in targets {
            total += w * value_exact(mdp, &policy, ct)?;
        }
        Ok(total)
    };
    let base = value_under(params)?;
    let policy = SoftmaxPolicy::new(params, phi);
    let scored: Vec<(Context<R>, R)> = candidates
        .iter()
        .map(|c| {
            let trajectories = crate::mdp::enumerate_trajectories(mdp, &policy, c, budget)?;
            // Accumulate per-trajectory differences so a no-op update yields
            // an exactly zero improvement.
            let mut improvement = R::zero();
            for (traj, prob) in &trajectories {
                let updated = reinforce_update(params, traj, phi, cfg)?;
                improvement += *prob * (value_under(&updated)? - base);
            }
            Ok((c.clone(), improvement))
        })
        .collect::<Result<_>>()?;
    let k = argmax_by_score(&scored, |c| c.id);
    Ok(scored[k].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;

    #[test]
    fn potential_endpoints_and_peak() {
        assert_eq!(learning_potential(0.0, 1.0), 0.0);
        assert_eq!(learning_potential(1.0, 1.0), 0.0);
        assert_eq!(learning_potential(0.5, 1.0), 0.25);
    }

    #[test]
    fn score_is_plain_product() {
        assert_eq!(procurl_score(0.25, 0.25, 1.0), 0.0625);
        assert_eq!(procurl_score(0.0, 0.25, 0.9), 0.0);
        let sim = (-5.0f64).exp();
        assert_relative_eq!(
            procurl_score(0.2, 0.1, sim),
            0.2 * 0.1 * 0.006_737_946_999_085_467,
            max_relative = 1e-12
        );
    }

    #[test]
    fn neg_exp_distance_kernel_bounds() {
        let a = Context::new(0, vec![0.0, 0.0]).unwrap();
        let b = Context::new(1, vec![3.0, 4.0]).unwrap();
        let k = SimilarityKernel::NegExpDistance;
        assert_relative_eq!(k.similarity(&a, &b), (-5.0f64).exp(), max_relative = 1e-12);
        assert_eq!(k.similarity(&a, &a), 1.0);
    }

    fn two_context_pools() -> (ValueTable<f64>, TaskPools<f64>) {
        let c0 = Context::new(0, vec![0.0]).unwrap();
        let c1 = Context::new(1, vec![1.0]).unwrap();
        let pools = TaskPools {
            unif_pool: vec![c0.clone(), c1.clone()],
            targ_pool: vec![c1.clone()],
            target_weights: vec![1.0],
        };
        let mut table = ValueTable::new(1.0).unwrap();
        table.insert(0, 0.5);
        table.insert(1, 0.5);
        (table, pools)
    }

    #[test]
    fn two_point_softmax_matches_closed_form() {
        // Scores 1 and 0 at beta = 1 select with odds e : 1.
        let mut counts = [0usize; 2];
        let n = 200_000;
        let mut rng = stream_rng(11, Stream::Teacher);
        let logits = [1.0f64, 0.0];
        for _ in 0..n {
            counts[sample_softmax(&logits, &mut rng).unwrap()] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        let expected = std::f64::consts::E / (1.0 + std::f64::consts::E);
        // 5 sigma binomial band.
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((p0 - expected).abs() < 5.0 * sigma, "p0={p0} expected={expected}");
    }

    #[test]
    fn softmax_logits_shift_invariant() {
        let mut rng_a = stream_rng(5, Stream::Teacher);
        let mut rng_b = stream_rng(5, Stream::Teacher);
        let a = [0.0f64, 0.7, -1.2];
        let b = [100.0f64, 100.7, 98.8];
        for _ in 0..100 {
            assert_eq!(
                sample_softmax(&a, &mut rng_a).unwrap(),
                sample_softmax(&b, &mut rng_b).unwrap()
            );
        }
    }

    #[test]
    fn pair_selection_reports_score() {
        let (table, pools) = two_context_pools();
        let cfg = TeacherConfig {
            strategy: Strategy::ProcurlTarget,
            beta: 1.0,
            kernel: SimilarityKernel::NegExpDistance,
        };
        let mut rng = stream_rng(2, Stream::Teacher);
        let choice = select_softmax_pair(&table, &pools, &cfg, &mut rng).unwrap();
        assert_eq!(choice.target.id, 1);
        let sim = cfg.kernel.similarity(&choice.task, &choice.target);
        assert_relative_eq!(choice.score, 0.25 * 0.25 * sim, max_relative = 1e-12);
    }

    #[test]
    fn missing_table_entry_is_error() {
        let (_, pools) = two_context_pools();
        let table = ValueTable::new(1.0).unwrap();
        let cfg = TeacherConfig {
            strategy: Strategy::ProcurlTarget,
            beta: 1.0,
            kernel: SimilarityKernel::NegExpDistance,
        };
        let mut rng = stream_rng(2, Stream::Teacher);
        assert!(select_softmax_pair(&table, &pools, &cfg, &mut rng).is_err());
    }

    #[test]
    fn unif_selection_uniform_when_values_equal() {
        let (table, pools) = two_context_pools();
        let cfg = TeacherConfig {
            strategy: Strategy::ProcurlUnif,
            beta: 50.0,
            kernel: SimilarityKernel::NegExpDistance,
        };
        let mut rng = stream_rng(3, Stream::Teacher);
        let mut counts = [0usize; 2];
        let n = 100_000;
        for _ in 0..n {
            let (c, _) = select_procurl_unif(&table, &pools, &cfg, &mut rng).unwrap();
            counts[c.id] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p0 - 0.5).abs() < 5.0 * sigma, "p0={p0}");
    }

    #[test]
    fn target_baseline_respects_point_mass() {
        let (_, pools) = two_context_pools();
        let mut rng = stream_rng(4, Stream::Teacher);
        for _ in 0..100 {
            let c = select_baseline(&pools, Strategy::Target, &mut rng).unwrap();
            assert_eq!(c.id, 1);
        }
    }

    #[test]
    fn iid_baseline_frequencies() {
        let (_, pools) = two_context_pools();
        let mut rng = stream_rng(6, Stream::Teacher);
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[select_baseline(&pools, Strategy::Iid, &mut rng).unwrap().id] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p0 - 0.5).abs() < 3.0 * sigma, "p0={p0}");
    }

    #[test]
    fn bimodal_target_splits_evenly() {
        let c0 = Context::new(0, vec![0.0]).unwrap();
        let c1 = Context::new(1, vec![1.0]).unwrap();
        let pools = TaskPools {
            unif_pool: vec![c0.clone(), c1.clone()],
            targ_pool: vec![c0, c1],
            target_weights: vec![0.5, 0.5],
        };
        let mut rng = stream_rng(8, Stream::Teacher);
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[select_baseline(&pools, Strategy::Target, &mut rng).unwrap().id] += 1;
        }
        let p0 = counts[0] as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p0 - 0.5).abs() < 3.0 * sigma, "p0={p0}");
    }

    #[test]
    fn argmax_tie_breaks_to_lowest_id() {
        let c0 = Context::new(3, vec![0.0]).unwrap();
        let c1 = Context::new(1, vec![1.0]).unwrap();
        let c2 = Context::new(2, vec![2.0]).unwrap();
        let items = vec![(c0, 0.0f64), (c1, 0.0), (c2, 0.0)];
        let k = argmax_by_score(&items, |c| c.id);
        assert_eq!(items[k].0.id, 1);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in [
            Strategy::ProcurlTarget,
            Strategy::ProcurlUnif,
            Strategy::Iid,
            Strategy::Target,
            Strategy::GradientAlign,
            Strategy::GreedyOracle,
        ] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }
}
