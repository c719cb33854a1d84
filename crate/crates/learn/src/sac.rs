//! Entropy-regularized actor-critic trainer for per-clip specialists.
//!
//! The agent keeps M critics with dropout and layer norm, M Polyak-averaged
//! target critics, a tanh-squashed Gaussian policy, and a learnable
//! temperature. Critic targets take the minimum over the target critics and
//! subtract the entropy term; terminal transitions drop the bootstrap.

use crate::policy::GaussianPolicy;
use crate::replay::{ReplayBuffer, Transition};
use crate::{LearnError, Real};
use pianoforte_core::reward::score_episode;
use pianoforte_core::{EnvConfig, GoalMatrix, PianoEnv};
use pianoforte_nn::{
    ema_update, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Activation, Checkpoint,
    Mlp, MlpSpec, Tensor2,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    /// Env steps per gradient update; the ratio is exact after warmup.
    pub update_interval: usize,
    pub gamma: Real,
    pub lr: Real,
    pub weight_decay: Real,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub n_critics: usize,
    pub critic_dropout: Real,
    /// Polyak factor: target <- polyak * target + (1 - polyak) * online.
    pub polyak: Real,
    /// Target policy entropy is this value times the action dimension.
    pub target_entropy_per_dim: Real,
    pub eval_interval: usize,
    /// Stop once a periodic evaluation reaches this F1.
    pub early_stop_f1: Option<Real>,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            total_steps: 500_000,
            warmup_steps: 5_000,
            batch_size: 256,
            update_interval: 2,
            gamma: 0.88,
            lr: 3e-4,
            weight_decay: 1e-6,
            buffer_capacity: 200_000,
            hidden: vec![256, 256, 256],
            n_critics: 2,
            critic_dropout: 0.01,
            polyak: 0.95,
            target_entropy_per_dim: -0.5,
            eval_interval: 10_000,
            early_stop_f1: None,
            seed: 0,
        }
    }
}

/// Bootstrapped regression target for one transition.
pub fn q_target_value(
    reward: Real,
    done: bool,
    gamma: Real,
    min_q: Real,
    alpha: Real,
    log_prob: Real,
) -> Real {
    if done {
        reward
    } else {
        reward + gamma * (min_q - alpha * log_prob)
    }
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub policy: GaussianPolicy,
    pub critics: Vec<Mlp>,
    pub targets: Vec<Mlp>,
    /// Temperature is stored as log(alpha) so it stays positive.
    pub log_alpha: Tensor2,
    pub config: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    policy_opt: AdamState,
    critic_opts: Vec<AdamState>,
    alpha_opt: AdamState,
}

impl SacAgent {
    pub fn new<R: Rng>(rng: &mut R, obs_dim: usize, act_dim: usize, config: SacConfig) -> Self {
        assert!(config.n_critics >= 1, "need at least one critic");
        let policy = GaussianPolicy::new(rng, obs_dim, act_dim, &config.hidden, Activation::Gelu);
        let critic_spec = || {
            let mut sizes = vec![obs_dim + act_dim];
            sizes.extend_from_slice(&config.hidden);
            sizes.push(1);
            MlpSpec::new(sizes, Activation::Gelu)
                .with_layer_norm()
                .with_dropout(config.critic_dropout)
        };
        let critics: Vec<Mlp> =
            (0..config.n_critics).map(|_| Mlp::new(rng, critic_spec())).collect();
        let targets = critics.clone();
        let opt = AdamConfig::adam(config.lr, config.weight_decay);
        SacAgent {
            policy,
            targets,
            log_alpha: Tensor2::zeros(1, 1),
            policy_opt: AdamState::new(opt),
            critic_opts: (0..config.n_critics).map(|_| AdamState::new(opt)).collect(),
            alpha_opt: AdamState::new(AdamConfig::adam(config.lr, 0.0)),
            critics,
            config,
            obs_dim,
            act_dim,
        }
    }

    pub fn alpha(&self) -> Real {
        self.log_alpha.at(0, 0).exp()
    }

    fn stack<'a>(rows: impl Iterator<Item = &'a [Real]>, cols: usize) -> Tensor2 {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
            n += 1;
        }
        Tensor2::from_vec(n, cols, data)
    }

    fn concat_rows(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        assert_eq!(a.rows, b.rows);
        let cols = a.cols + b.cols;
        let mut out = Tensor2::zeros(a.rows, cols);
        for r in 0..a.rows {
            out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
            out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
        }
        out
    }

    /// Regression targets for a batch, using target critics only.
    pub fn compute_targets<R: Rng>(&self, batch: &[&Transition], rng: &mut R) -> Vec<Real> {
        let next_obs = Self::stack(batch.iter().map(|t| t.next_obs.as_slice()), self.obs_dim);
        let (next_sample, _) = self.policy.sample(&next_obs, rng);
        let inputs = Self::concat_rows(&next_obs, &next_sample.action);
        let qs: Vec<Tensor2> = self.targets.iter().map(|t| t.forward_eval(&inputs)).collect();
        let alpha = self.alpha();
        batch
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let min_q = qs
                    .iter()
                    .map(|q| q.at(r, 0))
                    .fold(Real::INFINITY, Real::min);
                q_target_value(
                    t.reward,
                    t.done,
                    self.config.gamma,
                    min_q,
                    alpha,
                    next_sample.log_prob[r],
                )
            })
            .collect()
    }

    /// One regression step on every critic toward the shared target,
    /// followed by a Polyak move of the target critics.
    pub fn critic_update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> Real {
        let targets = self.compute_targets(batch, rng);
        let obs = Self::stack(batch.iter().map(|t| t.obs.as_slice()), self.obs_dim);
        let act = Self::stack(batch.iter().map(|t| t.action.as_slice()), self.act_dim);
        let inputs = Self::concat_rows(&obs, &act);
        let b = batch.len() as Real;
        let mut loss = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(self.critic_opts.iter_mut()) {
            let (q, cache) = critic.forward(&inputs, true, rng);
            let mut upstream = Tensor2::zeros(batch.len(), 1);
            for r in 0..batch.len() {
                let err = q.at(r, 0) - targets[r];
                loss += err * err / b;
                *upstream.at_mut(r, 0) = 2.0 * err / b;
            }
            let (grads, _) = critic.backward(&cache, &upstream);
            let named = grads.named();
            let refs: Vec<(String, &Tensor2)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
            opt.step_all(critic.named_params_mut(), &refs);
        }
        for (target, online) in self.targets.iter_mut().zip(self.critics.iter()) {
            let online_params = online.named_params();
            for ((_, shadow), (_, param)) in
                target.named_params_mut().into_iter().zip(online_params)
            {
                ema_update(shadow, param, self.config.polyak);
            }
        }
        loss
    }

    /// One policy step on E[alpha * log pi - min_i Q_i(s, a~)] plus the
    /// temperature step toward the entropy target. Critic parameters only
    /// provide gradients with respect to the sampled action.
    pub fn actor_update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> Real {
        let obs = Self::stack(batch.iter().map(|t| t.obs.as_slice()), self.obs_dim);
        let (sample, cache) = self.policy.sample(&obs, rng);
        let inputs = Self::concat_rows(&obs, &sample.action);
        let b = batch.len();
        let alpha = self.alpha();

        let evals: Vec<(Tensor2, pianoforte_nn::MlpCache)> =
            self.critics.iter().map(|c| c.forward_eval_cached(&inputs)).collect();
        let argmin: Vec<usize> = (0..b)
            .map(|r| {
                let mut best = 0;
                for i in 1..evals.len() {
                    if evals[i].0.at(r, 0) < evals[best].0.at(r, 0) {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let loss = (0..b)
            .map(|r| alpha * sample.log_prob[r] - evals[argmin[r]].0.at(r, 0))
            .sum::<Real>()
            / b as Real;

        // d loss / d action via the per-row minimum critic only.
        let mut d_action = Tensor2::zeros(b, self.act_dim);
        for (i, critic) in self.critics.iter().enumerate() {
            let mut upstream = Tensor2::zeros(b, 1);
            let mut any = false;
            for r in 0..b {
                if argmin[r] == i {
                    *upstream.at_mut(r, 0) = -1.0 / b as Real;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let (_, d_input) = critic.backward(&evals[i].1, &upstream);
            for r in 0..b {
                if argmin[r] == i {
                    for j in 0..self.act_dim {
                        *d_action.at_mut(r, j) += d_input.at(r, self.obs_dim + j);
                    }
                }
            }
        }
        let d_log_prob = vec![alpha / b as Real; b];
        let grads = self.policy.backward(&cache, &d_action, &d_log_prob);
        let named = grads.named();
        let refs: Vec<(String, &Tensor2)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
        self.policy_opt.step_all(self.policy.trunk.named_params_mut(), &refs);

        // Temperature: descend -log_alpha * mean(log_prob + target_entropy).
        let target_entropy = self.config.target_entropy_per_dim * self.act_dim as Real;
        let mean_gap =
            sample.log_prob.iter().map(|lp| lp + target_entropy).sum::<Real>() / b as Real;
        let grad = Tensor2::from_vec(1, 1, vec![-mean_gap]);
        self.alpha_opt.step("log_alpha", &mut self.log_alpha, &grad);
        loss
    }
}

/// One point of the periodic-evaluation learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_step: usize,
    pub eval_return: Real,
    pub f1: Real,
}

#[derive(Debug)]
pub struct SpecialistOutput {
    pub agent: SacAgent,
    pub curve: Vec<CurvePoint>,
    pub final_return: Real,
    pub final_f1: Real,
    pub env_steps: usize,
    pub updates: usize,
    /// True when an early-stop threshold was requested and reached.
    pub converged: bool,
}

/// Deterministic evaluation: play the whole goal with mean actions and
/// score pressed keys against the goal.
pub fn evaluate_policy(
    policy: &GaussianPolicy,
    env_config: &EnvConfig,
    goal: &GoalMatrix,
    seed: u64,
) -> Result<(Real, Real), LearnError> {
    let mut cfg = env_config.clone();
    cfg.episode_len = 0;
    let mut env = PianoEnv::new(cfg, goal.clone());
    let mut obs = env.reset(seed);
    let mut pressed = Vec::with_capacity(goal.steps);
    let mut ret = 0.0;
    loop {
        let action = policy.mean_action(&obs);
        let step = env.step(&action).map_err(|e| LearnError::Env(e.to_string()))?;
        ret += step.reward.total;
        pressed.push(env.key_pressed());
        obs = step.observation;
        if step.done {
            break;
        }
    }
    let score = score_episode(&pressed, goal).map_err(|e| LearnError::Env(e.to_string()))?;
    Ok((ret, score.f1))
}

/// Trains one specialist on one goal: alternate environment collection with
/// one gradient update every `update_interval` env steps after warmup.
pub fn train_specialist(
    env_config: &EnvConfig,
    goal: &GoalMatrix,
    cfg: &SacConfig,
) -> Result<SpecialistOutput, LearnError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut action_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut update_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let eval_seed: u64 = master.gen();

    let obs_dim = env_config.obs_dim();
    let act_dim = env_config.action_dim();
    let mut agent = SacAgent::new(&mut init_rng, obs_dim, act_dim, cfg.clone());
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);

    let mut env = PianoEnv::new(env_config.clone(), goal.clone());
    let mut obs = env.reset(master.gen());
    let mut curve = Vec::new();
    let mut updates = 0usize;
    let mut env_steps = 0usize;
    let mut converged = false;
    let mut last_eval = (0.0, 0.0);

    for step in 1..=cfg.total_steps {
        let action: Vec<Real> = if step <= cfg.warmup_steps {
            (0..act_dim).map(|_| action_rng.gen::<Real>() * 2.0 - 1.0).collect()
        } else {
            agent.policy.sample_action(&obs, &mut action_rng)
        };
        let result = env.step(&action).map_err(|e| LearnError::Env(e.to_string()))?;
        buffer.push(Transition {
            obs,
            action,
            reward: result.reward.total,
            next_obs: result.observation.clone(),
            done: result.done,
        });
        env_steps = step;
        obs = if result.done { env.reset(master.gen()) } else { result.observation };

        if step > cfg.warmup_steps
            && buffer.len() >= cfg.batch_size
            && step % cfg.update_interval == 0
        {
            let batch = buffer.sample(&mut update_rng, cfg.batch_size);
            agent.critic_update(&batch, &mut update_rng);
            let batch = buffer.sample(&mut update_rng, cfg.batch_size);
            agent.actor_update(&batch, &mut update_rng);
            updates += 1;
        }

        if step % cfg.eval_interval == 0 {
            let (ret, f1) = evaluate_policy(&agent.policy, env_config, goal, eval_seed)?;
            curve.push(CurvePoint { env_step: step, eval_return: ret, f1 });
            last_eval = (ret, f1);
            if let Some(bar) = cfg.early_stop_f1 {
                if f1 >= bar {
                    converged = true;
                    break;
                }
            }
        }
    }
    if curve.is_empty() {
        let (ret, f1) = evaluate_policy(&agent.policy, env_config, goal, eval_seed)?;
        curve.push(CurvePoint { env_step: env_steps, eval_return: ret, f1 });
        last_eval = (ret, f1);
    }
    Ok(SpecialistOutput {
        agent,
        curve,
        final_return: last_eval.0,
        final_f1: last_eval.1,
        env_steps,
        updates,
        converged,
    })
}

/// Metadata stored alongside a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub song_id: String,
    pub clip_index: u32,
    pub f1_tag: Real,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    kind: String,
    meta: PolicyMeta,
    policy: GaussianPolicy,
}

const POLICY_KIND: &str = "gaussian-policy";

pub fn save_policy_checkpoint(
    path: &Path,
    policy: &GaussianPolicy,
    meta: &PolicyMeta,
) -> Result<(), LearnError> {
    let file = PolicyFile {
        kind: POLICY_KIND.to_string(),
        meta: meta.clone(),
        policy: policy.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| LearnError::CheckpointMismatch(e.to_string()))?;
    save_checkpoint(path, &Checkpoint::new(json)).map_err(LearnError::Nn)
}

pub fn load_policy_checkpoint(path: &Path) -> Result<(GaussianPolicy, PolicyMeta), LearnError> {
    let ckpt = load_checkpoint(path).map_err(LearnError::Nn)?;
    let file: PolicyFile = serde_json::from_str(&ckpt.spec_json)
        .map_err(|e| LearnError::CheckpointMismatch(e.to_string()))?;
    if file.kind != POLICY_KIND {
        return Err(LearnError::CheckpointMismatch(format!(
            "expected {POLICY_KIND}, found {}",
            file.kind
        )));
    }
    Ok((file.policy, file.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SacConfig {
        SacConfig {
            total_steps: 400,
            warmup_steps: 100,
            batch_size: 16,
            update_interval: 2,
            buffer_capacity: 1_000,
            hidden: vec![16],
            eval_interval: 200,
            seed: 7,
            ..SacConfig::default()
        }
    }

    fn tiny_env_config() -> EnvConfig {
        EnvConfig { lookahead: 2, ..EnvConfig::default() }
    }

    fn single_key_goal(steps: usize) -> GoalMatrix {
        // Key 39 held every step; comfortably under the left hand's home.
        let mut goal = GoalMatrix::new("single-key", steps, 2, 0.05);
        for t in 0..steps {
            goal.set(t, 39, true);
        }
        goal
    }

    fn make_batch(rng: &mut ChaCha8Rng, n: usize, obs_dim: usize, act_dim: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                obs: (0..obs_dim).map(|_| rng.gen::<Real>() - 0.5).collect(),
                action: (0..act_dim).map(|_| rng.gen::<Real>() * 1.6 - 0.8).collect(),
                reward: rng.gen::<Real>(),
                next_obs: (0..obs_dim).map(|_| rng.gen::<Real>() - 0.5).collect(),
                done: i % 5 == 4,
            })
            .collect()
    }

    #[test]
    fn q_target_matches_hand_computation() {
        // Two critics valued 3 and 5, entropy term alpha * log_prob = 0.2.
        let y = q_target_value(1.0, false, 0.88, 3.0_f64.min(5.0), 0.2, 1.0);
        assert!((y - 3.464).abs() < 1e-12, "y = {y}");
        // Terminal transitions and gamma = 0 both reduce to the reward.
        assert_eq!(q_target_value(1.5, true, 0.88, 3.0, 0.2, 1.0), 1.5);
        assert_eq!(q_target_value(1.5, false, 0.0, 3.0, 0.2, 1.0), 1.5);
    }

    #[test]
    fn single_critic_target_reduces_to_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SacConfig { n_critics: 1, hidden: vec![8], ..SacConfig::default() };
        let agent = SacAgent::new(&mut rng, 6, 3, cfg);
        let batch_store = make_batch(&mut rng, 4, 6, 3);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        // Recompute with the same rng stream to get the same next actions.
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let ys = agent.compute_targets(&batch, &mut rng_a);
        let next_obs =
            Tensor2::from_vec(4, 6, batch.iter().flat_map(|t| t.next_obs.clone()).collect());
        let (sample, _) = agent.policy.sample(&next_obs, &mut rng_b);
        let inputs = SacAgent::concat_rows(&next_obs, &sample.action);
        let q = agent.targets[0].forward_eval(&inputs);
        for r in 0..4 {
            let manual = q_target_value(
                batch[r].reward,
                batch[r].done,
                agent.config.gamma,
                q.at(r, 0),
                agent.alpha(),
                sample.log_prob[r],
            );
            assert!((ys[r] - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_loss_matches_scalar_oracle_on_one_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SacConfig {
            critic_dropout: 0.0,
            hidden: vec![8],
            polyak: 1.0,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(&mut rng, 5, 2, cfg);
        let batch_store = make_batch(&mut rng, 1, 5, 2);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        let mut rng_a = ChaCha8Rng::seed_from_u64(55);
        let ys = agent.compute_targets(&batch, &mut rng_a);
        let inputs = Tensor2::from_vec(
            1,
            7,
            batch[0].obs.iter().chain(batch[0].action.iter()).copied().collect(),
        );
        let expected: Real = agent
            .critics
            .iter()
            .map(|c| (c.forward_eval(&inputs).at(0, 0) - ys[0]).powi(2))
            .sum();
        let mut rng_b = ChaCha8Rng::seed_from_u64(55);
        let loss = agent.critic_update(&batch, &mut rng_b);
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn polyak_one_freezes_targets_and_tracking_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SacConfig { hidden: vec![8], polyak: 1.0, ..SacConfig::default() };
        let mut agent = SacAgent::new(&mut rng, 5, 2, cfg);
        let frozen: Vec<Tensor2> =
            agent.targets.iter().flat_map(|t| t.named_params().into_iter()).map(|(_, p)| p.clone()).collect();
        let batch_store = make_batch(&mut rng, 8, 5, 2);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        agent.critic_update(&batch, &mut rng);
        let after: Vec<Tensor2> =
            agent.targets.iter().flat_map(|t| t.named_params().into_iter()).map(|(_, p)| p.clone()).collect();
        assert_eq!(frozen, after, "rho = 1 must freeze target nets");
    }

    #[test]
    fn targets_move_only_through_polyak_averaging() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SacConfig { hidden: vec![8], polyak: 0.95, ..SacConfig::default() };
        let mut agent = SacAgent::new(&mut rng, 5, 2, cfg);
        let before: Vec<Tensor2> = agent
            .targets
            .iter()
            .flat_map(|t| t.named_params().into_iter())
            .map(|(_, p)| p.clone())
            .collect();
        let batch_store = make_batch(&mut rng, 8, 5, 2);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        agent.critic_update(&batch, &mut rng);
        let online: Vec<Tensor2> = agent
            .critics
            .iter()
            .flat_map(|c| c.named_params().into_iter())
            .map(|(_, p)| p.clone())
            .collect();
        let after: Vec<Tensor2> = agent
            .targets
            .iter()
            .flat_map(|t| t.named_params().into_iter())
            .map(|(_, p)| p.clone())
            .collect();
        for ((b, o), a) in before.iter().zip(&online).zip(&after) {
            for i in 0..a.len() {
                let expect = 0.95 * b.data[i] + 0.05 * o.data[i];
                assert!(
                    (a.data[i] - expect).abs() < 1e-12,
                    "target drifted off the Polyak line"
                );
            }
        }
    }

    #[test]
    fn flat_critics_and_zero_alpha_give_zero_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Weight decay off so the only forces are the Q and entropy terms.
        let cfg = SacConfig { hidden: vec![8], weight_decay: 0.0, ..SacConfig::default() };
        let mut agent = SacAgent::new(&mut rng, 5, 2, cfg);
        for critic in &mut agent.critics {
            for (_, p) in critic.named_params_mut() {
                p.data.fill(0.0);
            }
        }
        agent.log_alpha = Tensor2::from_vec(1, 1, vec![Real::NEG_INFINITY]);
        let before: Vec<Tensor2> =
            agent.policy.trunk.named_params().into_iter().map(|(_, p)| p.clone()).collect();
        let batch_store = make_batch(&mut rng, 8, 5, 2);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        agent.actor_update(&batch, &mut rng);
        let after: Vec<Tensor2> =
            agent.policy.trunk.named_params().into_iter().map(|(_, p)| p.clone()).collect();
        assert_eq!(before, after, "flat landscape must leave the policy unchanged");
    }

    #[test]
    fn entropy_term_alone_widens_the_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SacConfig { hidden: vec![8], lr: 1e-2, ..SacConfig::default() };
        let mut agent = SacAgent::new(&mut rng, 4, 2, cfg);
        for critic in &mut agent.critics {
            for (_, p) in critic.named_params_mut() {
                p.data.fill(0.0);
            }
        }
        let batch_store = make_batch(&mut rng, 16, 4, 2);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        let obs = Tensor2::from_vec(16, 4, batch.iter().flat_map(|t| t.obs.clone()).collect());
        // Log-probs fall as sigma grows; estimate entropy from fixed draws.
        let entropy_probe = |agent: &SacAgent, rng: &mut ChaCha8Rng| {
            let (s, _) = agent.policy.sample(&obs, rng);
            -s.log_prob.iter().sum::<Real>() / 16.0
        };
        let mut probe_rng = ChaCha8Rng::seed_from_u64(123);
        let before = entropy_probe(&agent, &mut probe_rng);
        for _ in 0..150 {
            agent.actor_update(&batch, &mut rng);
        }
        let mut probe_rng = ChaCha8Rng::seed_from_u64(123);
        let after = entropy_probe(&agent, &mut probe_rng);
        assert!(after > before, "entropy must rise: {before} -> {after}");
    }

    #[test]
    fn policy_mean_climbs_a_quadratic_critic() {
        // Critics are pre-trained on Q(s, a) = -(a - 0.4)^2, so the actor
        // update should move the deterministic action toward 0.4.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SacConfig { hidden: vec![16], lr: 3e-3, ..SacConfig::default() };
        let mut agent = SacAgent::new(&mut rng, 2, 1, cfg.clone());
        let mut opts: Vec<AdamState> =
            (0..cfg.n_critics).map(|_| AdamState::new(AdamConfig::adam(1e-2, 0.0))).collect();
        for _ in 0..800 {
            let n = 64;
            let mut inputs = Tensor2::zeros(n, 3);
            let mut labels = vec![0.0; n];
            for r in 0..n {
                let a = rng.gen::<Real>() * 2.0 - 1.0;
                *inputs.at_mut(r, 0) = rng.gen::<Real>() - 0.5;
                *inputs.at_mut(r, 1) = rng.gen::<Real>() - 0.5;
                *inputs.at_mut(r, 2) = a;
                labels[r] = -(a - 0.4) * (a - 0.4);
            }
            for (critic, opt) in agent.critics.iter_mut().zip(opts.iter_mut()) {
                let (q, cache) = critic.forward_eval_cached(&inputs);
                let mut upstream = Tensor2::zeros(n, 1);
                for r in 0..n {
                    *upstream.at_mut(r, 0) = 2.0 * (q.at(r, 0) - labels[r]) / n as Real;
                }
                let (grads, _) = critic.backward(&cache, &upstream);
                let named = grads.named();
                let refs: Vec<(String, &Tensor2)> =
                    named.iter().map(|(n2, t)| (n2.clone(), *t)).collect();
                opt.step_all(critic.named_params_mut(), &refs);
            }
        }
        agent.log_alpha = Tensor2::from_vec(1, 1, vec![-12.0]);
        let batch_store = make_batch(&mut rng, 32, 2, 1);
        let batch: Vec<&Transition> = batch_store.iter().collect();
        for _ in 0..300 {
            agent.actor_update(&batch, &mut rng);
        }
        let probe = agent.policy.mean_action(&[0.1, -0.2]);
        assert!(
            (probe[0] - 0.4).abs() < 0.15,
            "mean action {} should approach 0.4",
            probe[0]
        );
    }

    #[test]
    fn seed_fixed_training_reproduces_its_curve_and_update_count() {
        let env_cfg = tiny_env_config();
        let goal = single_key_goal(30);
        let cfg = tiny_cfg();
        let a = train_specialist(&env_cfg, &goal, &cfg).unwrap();
        let b = train_specialist(&env_cfg, &goal, &cfg).unwrap();
        assert_eq!(a.curve, b.curve, "same seed must give the same curve");
        assert_eq!(a.env_steps, b.env_steps);
        // One update every update_interval steps after warmup.
        assert_eq!(a.updates, (cfg.total_steps - cfg.warmup_steps) / cfg.update_interval);
        let pa: Vec<Tensor2> =
            a.agent.policy.trunk.named_params().into_iter().map(|(_, p)| p.clone()).collect();
        let pb: Vec<Tensor2> =
            b.agent.policy.trunk.named_params().into_iter().map(|(_, p)| p.clone()).collect();
        assert_eq!(pa, pb, "same seed must give identical parameters");
    }

    #[test]
    fn policy_checkpoint_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let policy = GaussianPolicy::new(&mut rng, 6, 3, &[8], Activation::Gelu);
        let meta = PolicyMeta {
            song_id: "toy".to_string(),
            clip_index: 2,
            f1_tag: 0.97,
            seed: 11,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expert.ckpt");
        save_policy_checkpoint(&path, &policy, &meta).unwrap();
        let (loaded, meta2) = load_policy_checkpoint(&path).unwrap();
        assert_eq!(policy, loaded);
        assert_eq!(meta, meta2);
    }
}
