//! Saving a field Jacobian batch and scoring designs from the reloaded copy.
//!
//! ```bash
//! cargo run --release --example batch_cache
//! ```

use geomoed::criteria::expected_criteria;
use geomoed::geometry::DEFAULT_RANK_TOL;
use geomoed::models::{ForwardModel, HeatModel, HeatModelConfig};
use geomoed::sampling::{assemble_design_jacobian, draw_samples, estimate_field_jacobians, FieldJacobianBatch};

fn main() -> geomoed::Result<()> {
    let model = HeatModel::new(HeatModelConfig::rod())?;
    let bx = model.parameter_box().expect("heat models are boxed");
    let batch = estimate_field_jacobians(&model, &draw_samples(&bx, 500, 9)?, 1e-5)?;
    let path = std::env::temp_dir().join("geomoed_rod_batch.bin");
    batch.save(&path)?;
    let loaded = FieldJacobianBatch::load(&path)?;
    println!("{} ({} samples, {} field values) -> {}", loaded.model_id, loaded.sample_count(), loaded.field_len(), path.display());
    for design in [[40, 0], [23, 10], [30, 17]] {
        let r = expected_criteria(&assemble_design_jacobian(&loaded, &design)?, DEFAULT_RANK_TOL);
        println!("design {design:?}: ESE^-1 {:.2}  ESK^-1 {:.4}", r.ese_inverse, r.esk_inverse);
    }
    Ok(())
}
