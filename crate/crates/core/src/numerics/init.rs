use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// The generator behind every seeded draw in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weights drawn uniformly from `±sqrt(1/fan_in)`.
pub fn uniform_fan_in(rng: &mut SeededRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = libm::sqrt(1.0 / fan_in.max(1) as f64);
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}
