//! Shared inputs for the benchmarks.

use benchsim_core::liesym::{default_grids, invert_joint_density, InversionConfig, JointDensityGrid};
use benchsim_core::processes::MmmParams;
use nalgebra::DMatrix;

/// Stylized model with `Y₀ = 20`.
pub fn stylized() -> MmmParams {
    MmmParams::stylized()
}

/// A well-conditioned 3×3 positive definite start.
pub fn wishart_start() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 0.8, 0.2, 0.1, 0.2, 0.6])
}

/// Joint density of `(Y_T, ∫dt/Y)` at `T = 1` on an `n × n` grid.
pub fn density_grid(n: usize) -> JointDensityGrid {
    let p = stylized();
    let (yg, vg) = default_grids(p.y0(), 1.0, p.eta, n, n).expect("stylized grids");
    invert_joint_density(p.y0(), 1.0, p.eta, &InversionConfig::default(), &yg, &vg).expect("stylized inversion")
}
