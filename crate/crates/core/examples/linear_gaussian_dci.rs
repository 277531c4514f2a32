//! Identity map with Gaussian initial and observed densities: the accepted
//! samples should reproduce the observed mean and covariance.
//!
//! ```bash
//! cargo run --release --example linear_gaussian_dci
//! ```

use geomoed::dci::{dci_solve, moments, BandwidthRule, DensitySpec};
use geomoed::models::LinearMap;
use nalgebra::DMatrix;

fn main() -> geomoed::Result<()> {
    let model = LinearMap::identity(2);
    let init = DensitySpec::isotropic(vec![0.0, 0.0], 1.0)?;
    let obs_cov = DMatrix::from_row_slice(2, 2, &[0.25, 0.05, 0.05, 0.16]);
    let observed = DensitySpec::gaussian(vec![0.3, -0.2], obs_cov.clone())?;
    let ens = dci_solve(&model, &[0, 1], &init, &observed, 10_000, 1, &BandwidthRule::Silverman)?;
    let accepted = ens.accepted_points();
    let (mean, cov) = moments(&accepted);
    println!("E[r] = {:.4} +- {:.4}", ens.mean_ratio, ens.stderr);
    println!("accepted {} of {}", accepted.len(), ens.len());
    println!("mean {mean:.4?}  (observed [0.3, -0.2])");
    println!("covariance {cov:.4}observed {obs_cov:.4}");
    Ok(())
}
