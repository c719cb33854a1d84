//! Weight initialization.

use crate::{Real, Tensor2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Draws from N(0, std²) truncated to ±2 std by resampling.
pub fn truncated_normal<R: Rng>(rng: &mut R, std: Real) -> Real {
    if std == 0.0 {
        return 0.0;
    }
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    loop {
        let v = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Fan-in scaled truncated-normal weight matrix: std = 1/sqrt(fan_in).
pub fn init_linear_weight<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor2 {
    let std = 1.0 / (fan_in as Real).sqrt();
    let data = (0..fan_in * fan_out).map(|_| truncated_normal(rng, std)).collect();
    Tensor2::from_vec(fan_in, fan_out, data)
}
