//! Tanh-squashed Gaussian policy head.
//!
//! An MLP trunk maps the observation to per-dimension mean and raw
//! log-std; the log-std is soft-clamped into a fixed range so its
//! gradient never dies. Actions are `tanh` of a reparameterized Gaussian
//! draw, and log-probabilities carry the change-of-variables correction
//! for the squash.

use crate::Real;
use pianoforte_nn::{Mlp, MlpCache, MlpGrads, MlpSpec, Tensor2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Soft log-std range: raw head output is mapped through a scaled tanh
/// into [MIN, MAX].
const LOG_STD_MIN: Real = -5.0;
const LOG_STD_MAX: Real = 2.0;

const LN_2PI: Real = 1.837_877_066_409_345_4;
const LN_2: Real = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    /// Trunk mapping obs to `2 * act_dim` outputs (means then raw stds).
    pub trunk: Mlp,
    pub act_dim: usize,
}

/// Reparameterized draw plus its log-density.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// Batch of squashed actions in (-1, 1), one row per observation.
    pub action: Tensor2,
    /// Per-row log-probability of the drawn action.
    pub log_prob: Vec<Real>,
}

/// Forward intermediates needed to push gradients back to the trunk.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    mlp: MlpCache,
    raw_log_std: Tensor2,
    sigma: Tensor2,
    eps: Tensor2,
    a: Tensor2,
}

fn soft_clamp(raw: Real) -> Real {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0)
}

fn soft_clamp_derivative(raw: Real) -> Real {
    let t = raw.tanh();
    0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t)
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable `ln(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))`.
fn ln_one_minus_tanh_sq(u: Real) -> Real {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

impl GaussianPolicy {
    pub fn new<R: Rng>(
        rng: &mut R,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        activation: pianoforte_nn::Activation,
    ) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        GaussianPolicy { trunk: Mlp::new(rng, MlpSpec::new(sizes, activation)), act_dim }
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    /// Reparameterized sample for a batch of observation rows.
    pub fn sample<R: Rng>(&self, obs: &Tensor2, rng: &mut R) -> (PolicySample, PolicyCache) {
        let eps_data =
            (0..obs.rows * self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let eps = Tensor2::from_vec(obs.rows, self.act_dim, eps_data);
        self.sample_with_eps(obs, eps)
    }

    /// Sample with caller-supplied standard-normal draws, so gradient
    /// checks can hold the noise fixed.
    pub fn sample_with_eps(&self, obs: &Tensor2, eps: Tensor2) -> (PolicySample, PolicyCache) {
        let d = self.act_dim;
        assert_eq!(eps.shape(), (obs.rows, d));
        let (head, mlp) = self.trunk.forward_eval_cached(obs);
        let mut raw_log_std = Tensor2::zeros(obs.rows, d);
        let mut sigma = Tensor2::zeros(obs.rows, d);
        let mut a = Tensor2::zeros(obs.rows, d);
        let mut log_prob = vec![0.0; obs.rows];
        for (r, lp) in log_prob.iter_mut().enumerate() {
            for j in 0..d {
                let mu = head.at(r, j);
                let raw = head.at(r, d + j);
                let log_std = soft_clamp(raw);
                let s = log_std.exp();
                let u = mu + s * eps.at(r, j);
                let act = u.tanh();
                *raw_log_std.at_mut(r, j) = raw;
                *sigma.at_mut(r, j) = s;
                *a.at_mut(r, j) = act;
                *lp += -0.5 * eps.at(r, j) * eps.at(r, j)
                    - log_std
                    - 0.5 * LN_2PI
                    - ln_one_minus_tanh_sq(u);
            }
        }
        (
            PolicySample { action: a.clone(), log_prob },
            PolicyCache { mlp, raw_log_std, sigma, eps, a },
        )
    }

    /// Trunk gradients given upstream gradients on the sampled action
    /// (`d_action`) and on each row's log-probability (`d_log_prob`).
    pub fn backward(
        &self,
        cache: &PolicyCache,
        d_action: &Tensor2,
        d_log_prob: &[Real],
    ) -> MlpGrads {
        let d = self.act_dim;
        let rows = cache.a.rows;
        assert_eq!(d_action.shape(), (rows, d));
        assert_eq!(d_log_prob.len(), rows);
        let mut d_head = Tensor2::zeros(rows, 2 * d);
        for (r, &dlp) in d_log_prob.iter().enumerate() {
            for j in 0..d {
                let t = cache.a.at(r, j);
                let s = cache.sigma.at(r, j);
                let e = cache.eps.at(r, j);
                // Total gradient with respect to the pre-squash draw u:
                // the action path scales by tanh', and the squash
                // correction in log-prob contributes 2 tanh(u).
                let du = d_action.at(r, j) * (1.0 - t * t) + dlp * 2.0 * t;
                // u = mu + sigma * eps, and log-prob carries an explicit
                // -log_std term.
                let d_mu = du;
                let d_log_std = du * s * e - dlp;
                *d_head.at_mut(r, j) = d_mu;
                *d_head.at_mut(r, d + j) =
                    d_log_std * soft_clamp_derivative(cache.raw_log_std.at(r, j));
            }
        }
        self.trunk.backward(&cache.mlp, &d_head).0
    }

    /// Deterministic action: tanh of the mean head.
    pub fn mean_action(&self, obs: &[Real]) -> Vec<Real> {
        let x = Tensor2::from_vec(1, obs.len(), obs.to_vec());
        let head = self.trunk.forward_eval(&x);
        (0..self.act_dim).map(|j| head.at(0, j).tanh()).collect()
    }

    /// One stochastic action row for a single observation.
    pub fn sample_action<R: Rng>(&self, obs: &[Real], rng: &mut R) -> Vec<Real> {
        let x = Tensor2::from_vec(1, obs.len(), obs.to_vec());
        let (s, _) = self.sample(&x, rng);
        s.action.row(0).to_vec()
    }

    /// Log-density of an arbitrary action in (-1, 1)^d under the policy
    /// at one observation. Used to cross-check sampled log-probs and to
    /// integrate the density numerically.
    pub fn log_prob_of(&self, obs: &[Real], action: &[Real]) -> Real {
        assert_eq!(action.len(), self.act_dim);
        let x = Tensor2::from_vec(1, obs.len(), obs.to_vec());
        let head = self.trunk.forward_eval(&x);
        let mut lp = 0.0;
        for (j, &a) in action.iter().enumerate() {
            let a = a.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            let mu = head.at(0, j);
            let log_std = soft_clamp(head.at(0, j + self.act_dim));
            let s = log_std.exp();
            let u = a.atanh();
            let z = (u - mu) / s;
            lp += -0.5 * z * z - log_std - 0.5 * LN_2PI - ln_one_minus_tanh_sq(u);
        }
        lp
    }
}

/// One behavior-cloning step: regresses the deterministic action
/// `tanh(mean)` onto labels with mean squared error and returns the loss
/// before the update.
pub fn bc_update(
    policy: &mut GaussianPolicy,
    opt: &mut pianoforte_nn::AdamState,
    obs: &Tensor2,
    labels: &Tensor2,
) -> Real {
    let d = policy.act_dim;
    assert_eq!(labels.shape(), (obs.rows, d));
    let (head, cache) = policy.trunk.forward_eval_cached(obs);
    let n = (obs.rows * d) as Real;
    let mut loss = 0.0;
    let mut d_head = Tensor2::zeros(obs.rows, 2 * d);
    for r in 0..obs.rows {
        for j in 0..d {
            let pred = head.at(r, j).tanh();
            let err = pred - labels.at(r, j);
            loss += err * err / n;
            *d_head.at_mut(r, j) = 2.0 * err * (1.0 - pred * pred) / n;
        }
    }
    let (grads, _) = policy.trunk.backward(&cache, &d_head);
    let named = grads.named();
    let named_refs: Vec<(String, &Tensor2)> =
        named.iter().map(|(n, t)| (n.clone(), *t)).collect();
    opt.step_all(policy.trunk.named_params_mut(), &named_refs);
    loss
}
