//! Shared inputs for the benchmarks.

use iafa_core::tensor::Tensor;

/// Deterministic, non-degenerate fill in `[-scale, scale]`.
pub fn pattern(dims: &[usize], scale: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|i| scale * (0.37 * i as f64 + 0.11).sin()).collect();
    Tensor::from_vec(dims, data).expect("pattern dims")
}
