use geomoed::models::{ForwardModel, HeatModel, HeatModelConfig};

fn centre_value(cfg: HeatModelConfig, kappa: &[f64]) -> f64 {
    let model = HeatModel::new(cfg).unwrap();
    let u = model.evaluate(kappa).unwrap();
    let np = model.nodes_per_axis();
    if model.config().dimension == 1 {
        u[np / 2]
    } else {
        u[(np / 2) * np + np / 2]
    }
}

fn observed_order(values: [f64; 3]) -> f64 {
    ((values[0] - values[1]).abs() / (values[1] - values[2]).abs()).log2()
}

#[test]
fn plate_centre_converges_at_second_order() {
    let kappa = [0.02, 0.15, 0.05, 0.11, 0.08, 0.19, 0.01, 0.07, 0.13];
    let values = [30, 60, 120].map(|ne| {
        centre_value(
            HeatModelConfig {
                elements_per_axis: ne,
                ..HeatModelConfig::plate()
            },
            &kappa,
        )
    });
    let order = observed_order(values);
    println!("plate centre {values:?}, observed order {order:.3}");
    assert!(order >= 1.5, "order {order}");
}

#[test]
fn rod_centre_converges_at_second_order() {
    let values = [40, 80, 160].map(|ne| {
        centre_value(
            HeatModelConfig {
                elements_per_axis: ne,
                ..HeatModelConfig::rod()
            },
            &[0.03, 0.17],
        )
    });
    let order = observed_order(values);
    println!("rod centre {values:?}, observed order {order:.3}");
    assert!(order >= 1.5, "order {order}");
}

#[test]
fn time_stepping_converges_at_second_order() {
    let values = [20, 40, 80].map(|steps| {
        centre_value(
            HeatModelConfig {
                time_steps: steps,
                ..HeatModelConfig::rod()
            },
            &[0.03, 0.17],
        )
    });
    let order = observed_order(values);
    println!("rod time refinement {values:?}, observed order {order:.3}");
    assert!(order >= 1.5, "order {order}");
}
