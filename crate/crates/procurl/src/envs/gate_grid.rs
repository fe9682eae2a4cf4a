//! Sparse-reward gate gridworld.
//!
//! An N x N grid with a wall across one row. Each task places a gate (an odd
//! number of traversable cells) somewhere in that wall. The agent starts at
//! the top middle, the goal is at the bottom middle, and the only reward is 1
//! for reaching the goal. Moving into a wall cell is an absorbing failure.
//! Task difficulty rises as the gate narrows and moves toward an edge, which
//! gives the curriculum a graded path toward hard edge-gate targets.
//!
//! Reward bookkeeping: the goal cell is not terminal; the single action taken
//! from it earns the reward and leads to the absorbing sink. A policy that
//! enters the goal after `k` moves therefore collects `discount^k`.

use crate::error::{Error, Result};
use crate::learner::FeatureMap;
use crate::mdp::{Context, ContextualMdp, TargetSpec};
use crate::num::{real, Real};

/// Geometry and dynamics shared by every task of one grid family.
#[derive(Clone, Debug)]
pub struct GateGridSpec<R: Real> {
    /// Side length N of the grid.
    pub grid_size: usize,
    /// Row the wall occupies.
    pub wall_row: usize,
    /// `(gate_center_column, gate_width)` per task; widths are odd.
    pub gate_contexts: Vec<(usize, usize)>,
    /// Probability that the executed move is drawn uniformly from all four
    /// moves instead of the intended one.
    pub slip: R,
    pub discount: R,
    pub horizon_cap: usize,
}

impl<R: Real> GateGridSpec<R> {
    /// Standard family: every valid `(center, width)` combination for the
    /// given odd widths, wall in the middle row.
    pub fn standard(grid_size: usize, widths: &[usize], slip: R) -> Result<Self> {
        let mut gate_contexts = Vec::new();
        for &w in widths {
            let half = w / 2;
            for col in half..grid_size.saturating_sub(half) {
                gate_contexts.push((col, w));
            }
        }
        Self {
            grid_size,
            wall_row: grid_size / 2,
            gate_contexts,
            slip,
            discount: real(0.99),
            horizon_cap: 100,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        let n = self.grid_size;
        if n < 3 {
            return Err(Error::Config(format!("grid_size {n} too small (need >= 3)")));
        }
        if self.wall_row == 0 || self.wall_row >= n - 1 {
            return Err(Error::Config(format!(
                "wall_row {} must be strictly between start row 0 and goal row {}",
                self.wall_row,
                n - 1
            )));
        }
        if self.gate_contexts.is_empty() {
            return Err(Error::Config("no gate contexts".into()));
        }
        for &(col, w) in &self.gate_contexts {
            if w == 0 || w % 2 == 0 {
                return Err(Error::Config(format!("gate width {w} must be odd and >= 1")));
            }
            let half = w / 2;
            if col < half || col + half >= n {
                return Err(Error::Config(format!(
                    "gate (col={col}, width={w}) extends outside the grid"
                )));
            }
        }
        if !(self.slip >= R::zero() && self.slip < R::one()) {
            return Err(Error::Config(format!("slip {} outside [0, 1)", self.slip)));
        }
        if !(self.discount >= R::zero() && self.discount < R::one()) {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        if self.horizon_cap == 0 {
            return Err(Error::Config("horizon_cap must be >= 1".into()));
        }
        Ok(self)
    }
}

/// The compiled grid family. States are cells `row * N + col` plus one
/// absorbing sink; actions are up/down/left/right.
#[derive(Clone, Debug)]
pub struct GateGridMdp<R: Real> {
    spec: GateGridSpec<R>,
    contexts: Vec<Context<R>>,
}

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl<R: Real> GateGridMdp<R> {
    pub fn spec(&self) -> &GateGridSpec<R> {
        &self.spec
    }

    /// The task space; context features are `(signed column offset from the
    /// grid center, gate width)`.
    pub fn task_space(&self) -> &[Context<R>] {
        &self.contexts
    }

    pub fn n_cells(&self) -> usize {
        self.spec.grid_size * self.spec.grid_size
    }

    fn sink(&self) -> usize {
        self.n_cells()
    }

    pub fn start_state(&self) -> usize {
        self.spec.grid_size / 2
    }

    pub fn goal_state(&self) -> usize {
        let n = self.spec.grid_size;
        (n - 1) * n + n / 2
    }

    fn in_gate(&self, ctx_id: usize, col: usize) -> bool {
        let (center, w) = self.spec.gate_contexts[ctx_id];
        let half = w / 2;
        col >= center - half && col <= center + half
    }

    /// Destination of one executed move: off-grid moves stay put, wall cells
    /// outside the gate absorb into the sink.
    fn destination(&self, ctx_id: usize, state: usize, mv: usize) -> usize {
        let n = self.spec.grid_size;
        let (row, col) = (state / n, state % n);
        let (dr, dc) = MOVES[mv];
        let nr = row as isize + dr;
        let nc = col as isize + dc;
        if nr < 0 || nr >= n as isize || nc < 0 || nc >= n as isize {
            return state;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if nr == self.spec.wall_row && !self.in_gate(ctx_id, nc) {
            return self.sink();
        }
        nr * n + nc
    }

    /// Named target specs over this family's task space:
    /// `point-mass-edge` (right-edge gate of minimal width),
    /// `two-mode-edges` (both edge gates of minimal width, equal weights),
    /// `uniform-all` (every task).
    pub fn target_spec_library(&self) -> Vec<(&'static str, TargetSpec)> {
        let min_width = self
            .spec
            .gate_contexts
            .iter()
            .map(|&(_, w)| w)
            .min()
            .expect("non-empty contexts");
        let narrow: Vec<usize> = self
            .spec
            .gate_contexts
            .iter()
            .enumerate()
            .filter(|(_, &(_, w))| w == min_width)
            .map(|(i, _)| i)
            .collect();
        let right = *narrow
            .iter()
            .max_by_key(|&&i| self.spec.gate_contexts[i].0)
            .unwrap();
        let left = *narrow
            .iter()
            .min_by_key(|&&i| self.spec.gate_contexts[i].0)
            .unwrap();
        vec![
            ("point-mass-edge", TargetSpec::PointMass { id: right }),
            (
                "two-mode-edges",
                TargetSpec::Mixture {
                    components: vec![(left, 0.5), (right, 0.5)],
                },
            ),
            (
                "uniform-all",
                TargetSpec::UniformSubset {
                    ids: (0..self.contexts.len()).collect(),
                },
            ),
        ]
    }
}

impl<R: Real> ContextualMdp<R> for GateGridMdp<R> {
    fn n_states(&self) -> usize {
        self.n_cells() + 1
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn discount(&self) -> R {
        self.spec.discount
    }

    fn horizon_cap(&self) -> usize {
        self.spec.horizon_cap
    }

    fn r_max(&self) -> R {
        R::one()
    }

    fn transition(&self, c: &Context<R>, s: usize, a: usize) -> Vec<R> {
        let mut dist = vec![R::zero(); self.n_cells() + 1];
        if s == self.sink() {
            dist[s] = R::one();
            return dist;
        }
        if s == self.goal_state() {
            dist[self.sink()] = R::one();
            return dist;
        }
        let slip = self.spec.slip;
        let quarter = slip / real(4.0);
        for (mv, _) in MOVES.iter().enumerate() {
            let mut p = quarter;
            if mv == a {
                p += R::one() - slip;
            }
            if p > R::zero() {
                dist[self.destination(c.id, s, mv)] += p;
            }
        }
        dist
    }

    fn reward(&self, _c: &Context<R>, s: usize, _a: usize) -> R {
        if s == self.goal_state() {
            R::one()
        } else {
            R::zero()
        }
    }

    fn initial_dist(&self, _c: &Context<R>) -> Vec<R> {
        let mut dist = vec![R::zero(); self.n_cells() + 1];
        dist[self.start_state()] = R::one();
        dist
    }

    fn terminal(&self, s: usize) -> bool {
        s == self.sink()
    }
}

/// One-hot features that share the gate-approach skill across tasks: at and
/// above the wall row the column is indexed *relative to the gate center*,
/// below it absolutely. "Move toward the gate, drop through, then navigate
/// to the goal" is then a single weight pattern every task reuses, which is
/// the grid's analogue of correlated tasks whose policies transfer.
#[derive(Clone, Debug)]
pub struct GateRelativeFeatures {
    grid_size: usize,
    wall_row: usize,
    /// Gate center column per context id.
    gate_centers: Vec<usize>,
}

impl GateRelativeFeatures {
    pub fn new<R: Real>(mdp: &GateGridMdp<R>) -> Self {
        Self {
            grid_size: mdp.spec.grid_size,
            wall_row: mdp.spec.wall_row,
            gate_centers: mdp.spec.gate_contexts.iter().map(|&(col, _)| col).collect(),
        }
    }

    fn rel_bins(&self) -> usize {
        2 * self.grid_size - 1
    }

    /// Feature slot for a state: relative-column bins above and at the wall
    /// row, absolute columns below, one extra slot for the sink.
    fn slot(&self, state: usize, ctx_id: usize) -> usize {
        let n = self.grid_size;
        if state >= n * n {
            return (self.wall_row + 1) * self.rel_bins() + (n - 1 - self.wall_row) * n;
        }
        let (row, col) = (state / n, state % n);
        if row <= self.wall_row {
            let rel = col + (n - 1) - self.gate_centers[ctx_id];
            row * self.rel_bins() + rel
        } else {
            (self.wall_row + 1) * self.rel_bins() + (row - 1 - self.wall_row) * n + col
        }
    }

    fn slots(&self) -> usize {
        (self.wall_row + 1) * self.rel_bins() + (self.grid_size - 1 - self.wall_row) * self.grid_size + 1
    }

    pub fn dim(&self) -> usize {
        self.slots() * 4
    }

    fn index(&self, state: usize, ctx_id: usize, action: usize) -> usize {
        self.slot(state, ctx_id) * 4 + action
    }
}

impl<R: Real> FeatureMap<R> for GateRelativeFeatures {
    fn dim(&self) -> usize {
        GateRelativeFeatures::dim(self)
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn features(&self, s: usize, c: &Context<R>, a: usize) -> Vec<R> {
        let mut v = vec![R::zero(); GateRelativeFeatures::dim(self)];
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
        for slot in 0..self.slots() {
            theta[slot * 4 + action] += value;
        }
    }
}

/// Builds the grid family after validating the spec.
pub fn make_gate_grid<R: Real>(spec: GateGridSpec<R>) -> Result<GateGridMdp<R>> {
    let spec = spec.validated()?;
    let center = (spec.grid_size - 1) as f64 / 2.0;
    let contexts = spec
        .gate_contexts
        .iter()
        .enumerate()
        .map(|(i, &(col, w))| {
            Context::new(i, vec![real(col as f64 - center), real(w as f64)])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GateGridMdp { spec, contexts })
}
