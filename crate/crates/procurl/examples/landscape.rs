//! Prints the uniform-policy value and optimal value for every task of a
//! gate-grid family, for tuning experiment difficulty.

use procurl::envs::gate_grid::{make_gate_grid, GateGridSpec};
use procurl::mdp::UniformPolicy;
use procurl::value::{optimal_value, value_exact};

fn main() {
    let mut args = std::env::args().skip(1);
    let grid: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(11);
    let horizon: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(100);
    let slip: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let widths: Vec<usize> = (0..).map(|k| 2 * k + 1).take_while(|&w| w <= grid).collect();
    let mut spec = GateGridSpec::standard(grid, &widths, slip).unwrap();
    spec.horizon_cap = horizon;
    let mdp = make_gate_grid(spec).unwrap();
    let policy = UniformPolicy { n_actions: 4 };
    println!("id,col_offset,width,v_uniform,v_optimal");
    for c in mdp.task_space() {
        let vu = value_exact(&mdp, &policy, c).unwrap();
        let vo = optimal_value(&mdp, c).unwrap();
        println!("{},{},{},{:.6},{:.4}", c.id, c.features[0], c.features[1], vu, vo);
    }
}
