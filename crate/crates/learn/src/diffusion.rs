//! Discrete-time diffusion: squared-cosine beta schedule, closed-form
//! forward jumps, and epsilon-parameterized DDPM/DDIM reverse samplers.
//!
//! The schedule caps betas at 0.999. Denoised estimates are clipped to
//! [-1, 1] during reverse steps, and the cumulative alpha before step 0 is
//! defined as exactly 1.

use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<Real>,
    pub alphas: Vec<Real>,
    /// Cumulative products of alphas, one entry per training timestep.
    pub alpha_bars: Vec<Real>,
}

impl DiffusionSchedule {
    /// Squared-cosine schedule: beta_i = min(1 - f((i+1)/T) / f(i/T), 0.999)
    /// with f(t) = cos^2(((t + 0.008) / 1.008) * pi / 2).
    pub fn squaredcos_cap_v2(t_train: usize) -> Self {
        assert!(t_train >= 1);
        let f = |t: Real| ((t + 0.008) / 1.008 * PI / 2.0).cos().powi(2);
        let betas = (0..t_train)
            .map(|i| {
                let t1 = i as Real / t_train as Real;
                let t2 = (i + 1) as Real / t_train as Real;
                (1.0 - f(t2) / f(t1)).min(0.999)
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<Real>) -> Self {
        assert!(!betas.is_empty());
        assert!(betas.iter().all(|b| (0.0..1.0).contains(b)), "betas must lie in [0,1)");
        let alphas: Vec<Real> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        DiffusionSchedule { betas, alphas, alpha_bars }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Cumulative alpha at step `k`, with the step before the chain start
    /// pinned to exactly 1.
    pub fn alpha_bar_or_one(&self, k: isize) -> Real {
        if k < 0 {
            1.0
        } else {
            self.alpha_bars[k as usize]
        }
    }
}

/// Closed-form forward jump to step k with a given noise draw:
/// x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
pub fn forward_jump(x0: &[Real], eps: &[Real], alpha_bar: Real) -> Vec<Real> {
    assert_eq!(x0.len(), eps.len());
    let s = alpha_bar.sqrt();
    let n = (1.0 - alpha_bar).sqrt();
    x0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect()
}

/// Forward process sample at step k plus the noise used, which is the
/// epsilon-prediction regression target.
pub fn ddpm_forward<R: Rng>(
    rng: &mut R,
    x0: &[Real],
    k: usize,
    schedule: &DiffusionSchedule,
) -> (Vec<Real>, Vec<Real>) {
    let eps: Vec<Real> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let xk = forward_jump(x0, &eps, schedule.alpha_bars[k]);
    (xk, eps)
}

/// Inference timesteps for a strided reverse pass: (0..t_infer) * ratio,
/// visited from the largest down, with ratio = t_train / t_infer.
pub fn ddim_timesteps(t_train: usize, t_infer: usize) -> Vec<usize> {
    assert!(t_infer >= 1 && t_infer <= t_train, "need 1 <= t_infer <= t_train");
    let ratio = t_train / t_infer;
    (0..t_infer).map(|i| i * ratio).rev().collect()
}

/// One deterministic DDIM update from step k to step k_prev (k_prev may be
/// negative, meaning the chain start). The denoised estimate is clipped to
/// [-1, 1] before re-noising.
pub fn ddim_step(
    schedule: &DiffusionSchedule,
    x_k: &[Real],
    eps_hat: &[Real],
    k: usize,
    k_prev: isize,
) -> Vec<Real> {
    assert_eq!(x_k.len(), eps_hat.len());
    let abar = schedule.alpha_bars[k];
    let abar_prev = schedule.alpha_bar_or_one(k_prev);
    let (s, n) = (abar.sqrt(), (1.0 - abar).sqrt());
    let (sp, np) = (abar_prev.sqrt(), (1.0 - abar_prev).sqrt());
    x_k.iter()
        .zip(eps_hat)
        .map(|(x, e)| {
            let x0 = ((x - n * e) / s).clamp(-1.0, 1.0);
            sp * x0 + np * e
        })
        .collect()
}

/// Deterministic DDIM sampler over a strided subsequence of the training
/// steps, with the epsilon model queried at each visited timestep.
pub fn ddim_sample_with(
    mut eps_model: impl FnMut(&[Real], usize) -> Vec<Real>,
    schedule: &DiffusionSchedule,
    x_init: &[Real],
    t_infer: usize,
) -> Vec<Real> {
    let t_train = schedule.len();
    let ratio = t_train / t_infer;
    let mut x = x_init.to_vec();
    for k in ddim_timesteps(t_train, t_infer) {
        let eps_hat = eps_model(&x, k);
        let k_prev = k as isize - ratio as isize;
        x = ddim_step(schedule, &x, &eps_hat, k, k_prev);
    }
    x
}

/// Stochastic ancestral sampler over the full schedule. The denoised
/// estimate is clipped, and the final step adds no noise.
pub fn ddpm_sample_with<R: Rng>(
    mut eps_model: impl FnMut(&[Real], usize) -> Vec<Real>,
    schedule: &DiffusionSchedule,
    x_init: &[Real],
    rng: &mut R,
) -> Vec<Real> {
    let mut x = x_init.to_vec();
    for k in (0..schedule.len()).rev() {
        let eps_hat = eps_model(&x, k);
        let abar = schedule.alpha_bars[k];
        let abar_prev = schedule.alpha_bar_or_one(k as isize - 1);
        let beta = schedule.betas[k];
        let (s, n) = (abar.sqrt(), (1.0 - abar).sqrt());
        // Posterior mean through the clipped denoised estimate.
        let var = if k > 0 { (1.0 - abar_prev) / (1.0 - abar) * beta } else { 0.0 };
        let sigma = var.sqrt();
        let coeff_x0 = abar_prev.sqrt() * beta / (1.0 - abar);
        let coeff_xk = schedule.alphas[k].sqrt() * (1.0 - abar_prev) / (1.0 - abar);
        x = x
            .iter()
            .zip(&eps_hat)
            .map(|(xk, e)| {
                let x0 = ((xk - n * e) / s).clamp(-1.0, 1.0);
                let z: Real = if k > 0 { rng.sample(StandardNormal) } else { 0.0 };
                coeff_x0 * x0 + coeff_xk * xk + sigma * z
            })
            .collect();
    }
    x
}
