//! Sinusoidal position and time embeddings.

use crate::Real;

/// Embeds a scalar position into `dim` features: the first half holds
/// `sin(t * f_i)` and the second half `cos(t * f_i)`, with frequencies
/// `f_i = 10000^(-i / half)` sweeping from 1 down toward 1/10000.
pub fn sinusoidal_embedding(t: Real, dim: usize) -> Vec<Real> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding dim must be even");
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as Real) / half as Real);
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    out
}
