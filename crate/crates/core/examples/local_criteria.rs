//! Local scaling and skewness of a few Jacobians, computed three ways.
//!
//! ```bash
//! cargo run --example local_criteria
//! ```

use geomoed::geometry::{
    local_skewness_oracle, local_skewness_svd, parallelepiped_measure, skewness_as_scaling_ratio, JacobianMatrix,
    DEFAULT_RANK_TOL,
};

fn main() -> geomoed::Result<()> {
    let cases: [(&str, &[&[f64]]); 5] = [
        ("identity", &[&[1.0, 0.0], &[0.0, 1.0]]),
        ("sheared", &[&[1.0, 0.0], &[1.0, 1.0]]),
        ("nearly parallel", &[&[1.0, 0.0], &[1.0, 0.01]]),
        ("underdetermined 2x3", &[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]]),
        ("duplicate rows", &[&[1.0, 2.0], &[1.0, 2.0]]),
    ];
    println!("{:<22} {:>10} {:>10} {:>10} {:>10} {:>10}", "J", "vol", "SE", "SK svd", "SK gs", "SK ratio");
    for (name, rows) in cases {
        let j = JacobianMatrix::from_rows(rows)?;
        let svd = local_skewness_svd(&j, DEFAULT_RANK_TOL)?;
        let gs = local_skewness_oracle(&j)?;
        let ratio = skewness_as_scaling_ratio(&j, DEFAULT_RANK_TOL)?;
        println!(
            "{:<22} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            name,
            parallelepiped_measure(&j)?,
            svd.scaling,
            svd.skewness,
            gs.skewness,
            ratio
        );
    }

    let j = JacobianMatrix::from_rows(&[&[3.0, 1.0, 0.0], &[1.0, 2.0, 1.0], &[0.0, 1.0, 4.0]])?;
    let c = local_skewness_svd(&j, DEFAULT_RANK_TOL)?;
    println!("\nper-row skewness of a 3x3 Jacobian: {:?}", c.skewness_vector);
    println!("singular values: {:?}", c.singular_values);
    Ok(())
}
