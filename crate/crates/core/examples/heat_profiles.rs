//! Final-time temperatures of the welded rod for a few conductivity pairs,
//! and the centre value of the nine-plate model.
//!
//! ```bash
//! cargo run --release --example heat_profiles
//! ```

use geomoed::models::{ForwardModel, HeatModel, HeatModelConfig};

fn main() -> geomoed::Result<()> {
    let rod = HeatModel::new(HeatModelConfig::rod())?;
    let pairs = [[0.01, 0.01], [0.2, 0.2], [0.01, 0.2], [0.105, 0.105]];
    print!("{:>6}", "x");
    for p in &pairs {
        print!("  k=({:.3},{:.3})", p[0], p[1]);
    }
    println!();
    let fields: Vec<Vec<f64>> = pairs.iter().map(|p| rod.evaluate(p)).collect::<Result<_, _>>()?;
    for (i, x) in rod.coordinates().iter().enumerate().step_by(4) {
        print!("{:>6.3}", x[0]);
        for f in &fields {
            print!("  {:>15.4}", f[i]);
        }
        println!();
    }

    let plate = HeatModel::new(HeatModelConfig::plate())?;
    let kappa = vec![0.105; plate.param_dim()];
    let u = plate.evaluate(&kappa)?;
    let np = plate.nodes_per_axis();
    let centre = (np / 2) * np + np / 2;
    println!(
        "\nplate {}x{} nodes, uniform k = 0.105: centre {:.4}, corner {:.4}",
        np, np, u[centre], u[0]
    );
    Ok(())
}
