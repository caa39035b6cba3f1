//! Fixtures shared by the benchmarks.

use oja_core::model::{random_rotation, rotate_model, CovarianceModel};
use oja_core::nalgebra::DVector;

/// Power-law spectrum `1/i²` in a random basis.
pub fn rotated_power_model(dim: usize, seed: u64) -> CovarianceModel {
    let spectrum = (1..=dim).map(|i| 1.0 / (i * i) as f64).collect();
    let model = CovarianceModel::diagonal(spectrum).expect("valid spectrum");
    rotate_model(&model, &random_rotation(dim, seed)).expect("orthonormal rotation")
}

/// `(1, …, 1)/√d`.
pub fn flat_start(dim: usize) -> DVector<f64> {
    DVector::from_element(dim, 1.0 / (dim as f64).sqrt())
}
