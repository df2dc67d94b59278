use rand::Rng;

use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}
