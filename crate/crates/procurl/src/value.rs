//! Policy evaluation: exact horizon-capped dynamic programming, Monte-Carlo
//! estimation, and the per-task value table the teacher reads between
//! refreshes.

use crate::error::{Error, Result};
use crate::mdp::{CompiledContext, Context, ContextualMdp, Policy, TaskPools};
use crate::num::{real, Real};
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{self, Write};

/// How task values are (re)estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Exact backward-induction evaluation.
    Exact,
    /// Mean discounted return over sampled episodes.
    MonteCarlo { episodes: usize },
}

/// Exact `V(c)` under the horizon cap by backward induction over time.
pub fn value_exact<R, M, P>(mdp: &M, policy: &P, c: &Context<R>) -> Result<R>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    P: Policy<R> + ?Sized,
{
    let cc = CompiledContext::new(mdp, c)?;
    Ok(value_of_compiled(&cc, |s| policy.action_probs(s, c)))
}

/// Backward induction on a compiled context with caller-supplied action
/// probabilities.
pub fn value_of_compiled<R: Real>(
    cc: &CompiledContext<R>,
    mut probs_of: impl FnMut(usize) -> Vec<R>,
) -> R {
    let (n_states, n_actions) = (cc.n_states, cc.n_actions);
    let probs: Vec<Vec<R>> = (0..n_states)
        .map(|s| if cc.terminal[s] { Vec::new() } else { probs_of(s) })
        .collect();
    let mut v_next = vec![R::zero(); n_states];
    let mut v_cur = vec![R::zero(); n_states];
    for _ in 0..cc.horizon_cap {
        for s in 0..n_states {
            if cc.terminal[s] {
                v_cur[s] = R::zero();
                continue;
            }
            let mut v_s = R::zero();
            for (a, &pa) in probs[s].iter().enumerate() {
                let mut qa = cc.rewards[s * n_actions + a];
                for &(next, p) in &cc.trans[s * n_actions + a] {
                    qa += cc.discount * p * v_next[next];
                }
                v_s += pa * qa;
            }
            v_cur[s] = v_s;
        }
        std::mem::swap(&mut v_cur, &mut v_next);
    }
    cc.init
        .iter()
        .fold(R::zero(), |acc, &(s0, p0)| acc + p0 * v_next[s0])
}

/// Optimal horizon-capped value `V*(c)` by backward induction with a max over
/// actions.
pub fn optimal_value<R, M>(mdp: &M, c: &Context<R>) -> Result<R>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
{
    let cc = CompiledContext::new(mdp, c)?;
    let (n_states, n_actions) = (cc.n_states, cc.n_actions);
    let mut v_next = vec![R::zero(); n_states];
    let mut v_cur = vec![R::zero(); n_states];
    for _ in 0..cc.horizon_cap {
        for s in 0..n_states {
            if cc.terminal[s] {
                v_cur[s] = R::zero();
                continue;
            }
            let mut best = R::neg_infinity();
            for a in 0..n_actions {
                let mut qa = cc.rewards[s * n_actions + a];
                for &(next, p) in &cc.trans[s * n_actions + a] {
                    qa += cc.discount * p * v_next[next];
                }
                best = best.max(qa);
            }
            v_cur[s] = best;
        }
        std::mem::swap(&mut v_cur, &mut v_next);
    }
    Ok(cc
        .init
        .iter()
        .fold(R::zero(), |acc, &(s0, p0)| acc + p0 * v_next[s0]))
}

/// Monte-Carlo value estimate: mean discounted return over `n_episodes`
/// independent rollouts.
pub fn value_mc<R, M, P, G>(
    mdp: &M,
    policy: &P,
    c: &Context<R>,
    n_episodes: usize,
    rng: &mut G,
) -> Result<R>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    P: Policy<R> + ?Sized,
    G: Rng + ?Sized,
{
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be >= 1".into()));
    }
    let mut total = R::zero();
    for _ in 0..n_episodes {
        total += crate::mdp::rollout(mdp, policy, c, rng).total_return();
    }
    Ok(total / real(n_episodes as f64))
}

/// Per-task value estimates `V(c)`, clamped into `[0, v_max]` at write time.
/// The teacher reads possibly stale entries between refreshes, mirroring a
/// periodically updated critic.
#[derive(Clone, Debug)]
pub struct ValueTable<R: Real> {
    values: BTreeMap<usize, R>,
    v_max: R,
    last_update_step: u64,
    clamp_events: u64,
}

impl<R: Real> ValueTable<R> {
    pub fn new(v_max: R) -> Result<Self> {
        if !(v_max.is_finite() && v_max > R::zero()) {
            return Err(Error::Config(format!("v_max {v_max} must be positive")));
        }
        Ok(Self {
            values: BTreeMap::new(),
            v_max,
            last_update_step: 0,
            clamp_events: 0,
        })
    }

    pub fn v_max(&self) -> R {
        self.v_max
    }

    pub fn last_update_step(&self) -> u64 {
        self.last_update_step
    }

    /// Number of writes that had to be clamped into `[0, v_max]`.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, context_id: usize) -> Option<R> {
        self.values.get(&context_id).copied()
    }

    /// Stores a raw estimate, clamping it into `[0, v_max]`.
    pub fn insert(&mut self, context_id: usize, raw: R) -> R {
        let clamped = raw.max(R::zero()).min(self.v_max);
        if clamped != raw {
            self.clamp_events += 1;
            log::debug!(
                "value estimate {raw} for context {context_id} clamped to {clamped}"
            );
        }
        self.values.insert(context_id, clamped);
        clamped
    }

    /// Dump in the line format `step,context_id,value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "step,context_id,value")?;
        for (id, v) in &self.values {
            writeln!(out, "{},{},{}", self.last_update_step, id, v)?;
        }
        Ok(())
    }
}

/// Recomputes values for the contexts in both pools under the current policy.
/// With `dedup` set, each distinct context id is evaluated once; otherwise
/// every pool occurrence triggers an evaluation. Returns the number of
/// evaluations performed.
#[allow(clippy::too_many_arguments)]
pub fn refresh_values<R, M, P, G>(
    table: &mut ValueTable<R>,
    mdp: &M,
    policy: &P,
    pools: &TaskPools<R>,
    mode: EvalMode,
    dedup: bool,
    step: u64,
    rng: &mut G,
) -> Result<usize>
where
    R: Real,
    M: ContextualMdp<R> + ?Sized,
    P: Policy<R> + ?Sized,
    G: Rng + ?Sized,
{
    let mut evals = 0usize;
    let mut eval_one = |c: &Context<R>, rng: &mut G| -> Result<R> {
        evals += 1;
        match mode {
            EvalMode::Exact => value_exact(mdp, policy, c),
            EvalMode::MonteCarlo { episodes } => value_mc(mdp, policy, c, episodes, rng),
        }
    };
    if dedup {
        let mut distinct: BTreeMap<usize, &Context<R>> = BTreeMap::new();
        for c in pools.unif_pool.iter().chain(pools.targ_pool.iter()) {
            distinct.entry(c.id).or_insert(c);
        }
        for (&id, c) in &distinct {
            let v = eval_one(c, rng)?;
            table.insert(id, v);
        }
    } else {
        for c in pools.unif_pool.iter().chain(pools.targ_pool.iter()) {
            let v = eval_one(c, rng)?;
            table.insert(c.id, v);
        }
    }
    table.last_update_step = step;
    Ok(evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::UniformPolicy;
    use crate::rng::{stream_rng, Stream};

    /// Two-state chain: action 0 stays (reward 1), action 1 jumps to the
    /// terminal state (reward 0).
    struct Chain;

    impl ContextualMdp<f64> for Chain {
        fn n_states(&self) -> usize {
            2
        }
        fn n_actions(&self) -> usize {
            2
        }
        fn discount(&self) -> f64 {
            0.5
        }
        fn horizon_cap(&self) -> usize {
            10
        }
        fn r_max(&self) -> f64 {
            1.0
        }
        fn transition(&self, _c: &Context<f64>, _s: usize, a: usize) -> Vec<f64> {
            if a == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        }
        fn reward(&self, _c: &Context<f64>, _s: usize, a: usize) -> f64 {
            if a == 0 {
                1.0
            } else {
                0.0
            }
        }
        fn initial_dist(&self, _c: &Context<f64>) -> Vec<f64> {
            vec![1.0, 0.0]
        }
        fn terminal(&self, s: usize) -> bool {
            s == 1
        }
    }

    struct StayPolicy;
    impl Policy<f64> for StayPolicy {
        fn action_probs(&self, _s: usize, _c: &Context<f64>) -> Vec<f64> {
            vec![1.0, 0.0]
        }
    }

    fn ctx() -> Context<f64> {
        Context::new(0, vec![0.0]).unwrap()
    }

    #[test]
    fn exact_value_matches_geometric_sum() {
        // Always staying earns 1 + 0.5 + ... for horizon_cap steps.
        let v = value_exact(&Chain, &StayPolicy, &ctx()).unwrap();
        let expected: f64 = (0..10).map(|t| 0.5f64.powi(t)).sum();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic_mdp_makes_mc_exact() {
        let mut rng = stream_rng(3, Stream::Eval);
        let mc = value_mc(&Chain, &StayPolicy, &ctx(), 3, &mut rng).unwrap();
        let exact = value_exact(&Chain, &StayPolicy, &ctx()).unwrap();
        assert_eq!(mc, exact);
    }

    #[test]
    fn optimal_value_picks_stay() {
        let v = optimal_value(&Chain, &ctx()).unwrap();
        let expected: f64 = (0..10).map(|t| 0.5f64.powi(t)).sum();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn table_clamps_and_counts() {
        let mut table = ValueTable::new(1.0).unwrap();
        assert_eq!(table.insert(0, 1.0), 1.0);
        assert_eq!(table.clamp_events(), 0);
        assert_eq!(table.insert(1, 1.02), 1.0);
        assert_eq!(table.insert(2, -0.5), 0.0);
        assert_eq!(table.clamp_events(), 2);
        assert_eq!(table.get(1), Some(1.0));
    }

    #[test]
    fn refresh_dedup_counts_distinct_contexts() {
        let target = ctx();
        let pools = TaskPools {
            unif_pool: vec![
                Context::new(0, vec![0.0]).unwrap(),
                Context::new(0, vec![0.0]).unwrap(),
            ],
            targ_pool: vec![target.clone(); 400],
            target_weights: vec![1.0 / 400.0; 400],
        };
        let mut table = ValueTable::new(10.0).unwrap();
        let mut rng = stream_rng(0, Stream::Eval);
        let evals = refresh_values(
            &mut table,
            &Chain,
            &UniformPolicy { n_actions: 2 },
            &pools,
            EvalMode::Exact,
            true,
            7,
            &mut rng,
        )
        .unwrap();
        assert_eq!(evals, 1);
        assert_eq!(table.last_update_step(), 7);

        let evals = refresh_values(
            &mut table,
            &Chain,
            &UniformPolicy { n_actions: 2 },
            &pools,
            EvalMode::Exact,
            false,
            8,
            &mut rng,
        )
        .unwrap();
        assert_eq!(evals, 402);
    }

    #[test]
    fn table_csv_format() {
        let mut table = ValueTable::new(1.0).unwrap();
        table.insert(3, 0.25);
        table.last_update_step = 5;
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,context_id,value\n5,3,0.25\n");
    }
}
