//! Greedy placement of nine sensors on the nine-plate model.
//!
//! ```bash
//! cargo run --release --example plate_greedy -- 100
//! ```

use geomoed::design::{greedy_oed, DesignSpace};
use geomoed::geometry::DEFAULT_RANK_TOL;
use geomoed::models::{ForwardModel, HeatModel, HeatModelConfig};
use geomoed::sampling::{draw_samples, estimate_field_jacobians};

fn main() -> geomoed::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let model = HeatModel::new(HeatModelConfig::plate())?;
    let bx = model.parameter_box().expect("heat models are boxed");
    let batch = estimate_field_jacobians(&model, &draw_samples(&bx, n, 3)?, 1e-5)?;
    let space = DesignSpace::scalar(model.field_len())?;
    let trace = greedy_oed(&space, &batch, 9, 1e-3, DEFAULT_RANK_TOL)?;
    for r in &trace.rounds {
        let x = &model.coordinates()[r.chosen_field_index];
        println!(
            "round {}: {:?} at ({:.3}, {:.3}) plate {}  score {:.4}",
            r.round,
            r.utility,
            x[0],
            x[1],
            model.node_region(r.chosen_field_index),
            r.chosen_utility
        );
    }
    println!("stop: {:?}", trace.stop_reason);
    Ok(())
}
