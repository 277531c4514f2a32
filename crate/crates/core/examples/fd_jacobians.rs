//! Forward-difference Jacobians of the quadratic map against the exact one,
//! for shrinking steps.
//!
//! ```bash
//! cargo run --example fd_jacobians
//! ```

use geomoed::models::{ForwardModel, QuadraticMap};
use geomoed::sampling::{draw_samples, estimate_field_jacobians, ParameterBox};

fn main() -> geomoed::Result<()> {
    let model = QuadraticMap::default();
    let bx = ParameterBox::cube(2, 0.5, 2.0)?;
    let samples = draw_samples(&bx, 200, 42)?;
    for h in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        let batch = estimate_field_jacobians(&model, &samples, h)?;
        let mut worst = 0.0f64;
        for i in 0..batch.sample_count() {
            let exact = model.exact_jacobian(batch.sample(i)).expect("analytic");
            let err = (batch.field_jacobian(i) - &exact).abs().max();
            worst = worst.max(err);
        }
        println!("h = {h:.0e}   max abs error = {worst:.3e}");
    }
    Ok(())
}
