//! Shared inputs for the criterion benches in `benches/`.

use fb4_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `rows x cols` Gaussian tensor with roughly 5% of values scaled by 10.
pub fn outlier_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, 1.0).unwrap();
    let data = (0..rows * cols)
        .map(|i| {
            let v = n.sample(&mut rng);
            if i % 20 == 7 {
                v * 10.0
            } else {
                v
            }
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("valid shape")
}
