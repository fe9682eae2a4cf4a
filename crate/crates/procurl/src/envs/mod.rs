//! Concrete desk-scale environment families: a two-action contextual bandit
//! with controllable task correlation, and a sparse-reward gate gridworld.

pub mod bandit;
pub mod gate_grid;

pub use bandit::{make_bandit, BanditFeatures, BanditMdp, BanditSpec, ReprScheme};
pub use gate_grid::{make_gate_grid, GateGridMdp, GateGridSpec, GateRelativeFeatures};
