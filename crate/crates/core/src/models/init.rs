use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelSpec;
use crate::autodiff::Tensor;

/// Scaled-uniform initialization, deterministic in `seed`.
///
/// Every 2-D segment `[fan_in, fan_out]` is drawn from `U(−b, b)` with
/// `b = sqrt(6 / (fan_in + fan_out))`; bias vectors start at zero.
pub fn init_params<S: ModelSpec + ?Sized>(spec: &S, seed: u64) -> Tensor {
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; layout.total()];
    for seg in layout.segments() {
        if let [fan_in, fan_out] = seg.shape[..] {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut data[seg.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    Tensor::vector(data)
}
