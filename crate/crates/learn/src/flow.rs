//! Flow-matching primitives: straight-line interpolation, training pairs,
//! and Euler integration of a learned velocity field.
//!
//! The probability path is the zero-noise straight line between a standard
//! normal draw and the data point, so the regression target is exactly
//! `a1 - a0`.

use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;

/// Element-wise `(1 - t) * a0 + t * a1`.
pub fn interpolate(a0: &[Real], a1: &[Real], t: Real) -> Vec<Real> {
    assert_eq!(a0.len(), a1.len(), "interpolation endpoints must match");
    a0.iter().zip(a1).map(|(x0, x1)| (1.0 - t) * x0 + t * x1).collect()
}

/// One flow-matching training point.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    /// Noise endpoint a0.
    pub noise: Vec<Real>,
    /// Interpolation time in [0, 1].
    pub t: Real,
    /// Point on the path at time t.
    pub x_t: Vec<Real>,
    /// Velocity regression target a1 - a0.
    pub target: Vec<Real>,
}

/// Draws a0 ~ N(0, I) and t ~ U[0, 1] and forms the training pair for a
/// data point a1.
pub fn cfm_pair<R: Rng>(rng: &mut R, a1: &[Real]) -> FlowPair {
    let noise: Vec<Real> = (0..a1.len()).map(|_| rng.sample(StandardNormal)).collect();
    let t: Real = rng.gen();
    let x_t = interpolate(&noise, a1, t);
    let target = a1.iter().zip(&noise).map(|(x1, x0)| x1 - x0).collect();
    FlowPair { noise, t, x_t, target }
}

/// Integrates `da/dt = field(a, t)` from `a0` over t in [0, 1] with the
/// explicit Euler rule at a fixed step count.
pub fn euler_integrate(
    mut field: impl FnMut(&[Real], Real) -> Vec<Real>,
    a0: &[Real],
    steps: usize,
) -> Vec<Real> {
    assert!(steps >= 1, "need at least one integration step");
    let h = 1.0 / steps as Real;
    let mut a = a0.to_vec();
    for k in 0..steps {
        let t = k as Real * h;
        let u = field(&a, t);
        assert_eq!(u.len(), a.len(), "field must preserve dimension");
        for (ai, ui) in a.iter_mut().zip(&u) {
            *ai += ui * h;
        }
    }
    a
}
