//! Expected scaling and skewness over every pair of rod sensors, with the
//! local maxima of each utility.
//!
//! ```bash
//! cargo run --release --example rod_criteria_sweep -- 10000
//! ```

use geomoed::design::{exhaustive_oed, local_maxima, DesignSpace, Utility};
use geomoed::geometry::DEFAULT_RANK_TOL;
use geomoed::models::{ForwardModel, HeatModel, HeatModelConfig};
use geomoed::sampling::{draw_samples, estimate_field_jacobians};

fn main() -> geomoed::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let model = HeatModel::new(HeatModelConfig::rod())?;
    let bx = model.parameter_box().expect("heat models are boxed");
    let samples = draw_samples(&bx, n, 2024)?;
    let batch = estimate_field_jacobians(&model, &samples, 1e-5)?;
    let p = model.field_len();
    let space = DesignSpace::unordered_pairs(p)?.with_coordinates(&model);
    println!("{} sensor pairs, {} samples", space.len(), n);

    for utility in [Utility::EseInverse, Utility::EskInverse] {
        let result = exhaustive_oed(&space, &batch, utility, DEFAULT_RANK_TOL)?;
        let grid = space.pair_grid(&result.scores(), p)?;
        println!("\n{utility:?}: best {:?} = {:.4}", space.coordinates(result.argmax()), utility.of(result.best()));
        for flat in local_maxima(&grid) {
            let (a, b) = (flat / p, flat % p);
            if a > b {
                let i = space.find(&[a, b]).expect("pair in space");
                println!("  local max at ({:.3}, {:.3}): {:.4}", a as f64 / 40.0, b as f64 / 40.0, utility.of(&result.reports[i]));
            }
        }
    }
    Ok(())
}
