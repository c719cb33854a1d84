//! Trajectory collection: plain expert rollouts and the relabeling loop.
//!
//! The relabeling loop lets the student drive the environment, stores every
//! visited state with the expert's deterministic action, and behavior-clones
//! the student on the accumulated pairs until its evaluation return clears
//! the target or the iteration cap is hit. Relabeled actions are exactly
//! recomputable from the stored observations.

use crate::policy::{bc_update, GaussianPolicy};
use crate::shard::{Provenance, ShardStep, TrajectoryShard};
use crate::{LearnError, Real};
use pianoforte_core::scripted::scripted_action_from_obs;
use pianoforte_core::{EnvConfig, GoalMatrix, KeyboardGeometry, PianoEnv};
use pianoforte_nn::{AdamConfig, AdamState, Activation, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A data-generating controller with a deterministic reference action.
pub trait Expert {
    fn deterministic_action(&self, obs: &[Real]) -> Vec<Real>;
    fn noisy_action(&self, obs: &[Real], rng: &mut ChaCha8Rng) -> Vec<Real>;
}

/// Rule-based controller wrapper; noise is additive Gaussian, clamped back
/// into the action cube.
pub struct ScriptedExpert {
    pub config: EnvConfig,
    pub geometry: KeyboardGeometry,
    pub noise: Real,
}

impl ScriptedExpert {
    pub fn new(config: EnvConfig, noise: Real) -> Self {
        ScriptedExpert { config, geometry: KeyboardGeometry::standard(), noise }
    }
}

impl Expert for ScriptedExpert {
    fn deterministic_action(&self, obs: &[Real]) -> Vec<Real> {
        scripted_action_from_obs(obs, &self.config, &self.geometry)
    }

    fn noisy_action(&self, obs: &[Real], rng: &mut ChaCha8Rng) -> Vec<Real> {
        self.deterministic_action(obs)
            .into_iter()
            .map(|a| (a + self.noise * rng.sample::<Real, _>(StandardNormal)).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Learned controller wrapper: deterministic mean or a stochastic draw.
pub struct PolicyExpert {
    pub policy: GaussianPolicy,
}

impl Expert for PolicyExpert {
    fn deterministic_action(&self, obs: &[Real]) -> Vec<Real> {
        self.policy.mean_action(obs)
    }

    fn noisy_action(&self, obs: &[Real], rng: &mut ChaCha8Rng) -> Vec<Real> {
        self.policy.sample_action(obs, rng)
    }
}

/// Identifying metadata stamped onto every shard from one collection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardLabel {
    pub song_id: String,
    pub clip_index: u32,
    pub f1_tag: Real,
}

struct EpisodeRecord {
    observations: Vec<Vec<Real>>,
    taken_actions: Vec<Vec<Real>>,
    rewards: Vec<Real>,
}

/// Plays one episode, recording visited observations, the actions actually
/// taken, and the environment rewards at visitation time.
fn run_episode(
    env: &mut PianoEnv,
    reset_seed: u64,
    mut act: impl FnMut(&[Real]) -> Vec<Real>,
) -> Result<EpisodeRecord, LearnError> {
    let mut obs = env.reset(reset_seed);
    let mut record = EpisodeRecord {
        observations: Vec::new(),
        taken_actions: Vec::new(),
        rewards: Vec::new(),
    };
    loop {
        let action = act(&obs);
        let step = env.step(&action).map_err(|e| LearnError::Env(e.to_string()))?;
        record.observations.push(obs);
        record.taken_actions.push(action);
        record.rewards.push(step.reward.total);
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(record)
}

fn shard_from_episode(
    record: EpisodeRecord,
    actions: Vec<Vec<Real>>,
    label: &ShardLabel,
    provenance: Provenance,
    seed: u64,
    env_config: &EnvConfig,
) -> TrajectoryShard {
    let steps = record
        .observations
        .into_iter()
        .zip(actions)
        .zip(record.rewards)
        .map(|((observation, action), reward)| ShardStep { observation, action, reward })
        .collect();
    TrajectoryShard {
        song_id: label.song_id.clone(),
        clip_index: label.clip_index,
        f1_tag: label.f1_tag,
        provenance,
        seed,
        obs_dim: env_config.obs_dim(),
        act_dim: env_config.action_dim(),
        steps,
    }
}

/// `n` stochastic expert episodes from a shared reset seed; stored actions
/// are the noisy actions that actually drove the environment.
pub fn rollout_expert<E: Expert>(
    expert: &E,
    env_config: &EnvConfig,
    goal: &GoalMatrix,
    n: usize,
    noise_seed: u64,
    label: &ShardLabel,
) -> Result<Vec<TrajectoryShard>, LearnError> {
    let mut env = PianoEnv::new(env_config.clone(), goal.clone());
    let mut shards = Vec::with_capacity(n);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for _ in 0..n {
        let traj_seed: u64 = seed_rng.gen();
        let mut action_rng = ChaCha8Rng::seed_from_u64(traj_seed);
        let record =
            run_episode(&mut env, noise_seed, |obs| expert.noisy_action(obs, &mut action_rng))?;
        let actions = record.taken_actions.clone();
        shards.push(shard_from_episode(
            record,
            actions,
            label,
            Provenance::ExpertRollout,
            traj_seed,
            env_config,
        ));
    }
    Ok(shards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionConfig {
    /// Target return as a fraction of the expert's evaluation return.
    pub target_return_fraction: Real,
    /// Expert-driven episodes stored (relabeled) before the student acts.
    pub warmup_trajectories: usize,
    pub bc_batch: usize,
    pub bc_lr: Real,
    pub bc_steps_per_iteration: usize,
    pub max_iterations: usize,
    pub student_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            target_return_fraction: 0.95,
            warmup_trajectories: 5,
            bc_batch: 256,
            bc_lr: 1e-3,
            bc_steps_per_iteration: 100,
            max_iterations: 40,
            student_hidden: vec![256, 256, 256],
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct DaggerOutput {
    pub student: GaussianPolicy,
    pub shards: Vec<TrajectoryShard>,
    pub iterations: usize,
    pub expert_return: Real,
    pub target_return: Real,
    pub final_return: Real,
    /// False when the loop stopped at the iteration cap instead of the
    /// return target; partial data is still returned.
    pub converged: bool,
}

/// The relabeling loop. Warmup episodes are driven by the noisy expert,
/// later episodes by the stochastic student; every stored action is the
/// expert's deterministic action at the stored observation.
pub fn collect_dagger<E: Expert>(
    expert: &E,
    env_config: &EnvConfig,
    goal: &GoalMatrix,
    cfg: &CollectionConfig,
    label: &ShardLabel,
    student_init: Option<GaussianPolicy>,
) -> Result<DaggerOutput, LearnError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut action_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut bc_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let eval_seed: u64 = master.gen();

    let obs_dim = env_config.obs_dim();
    let act_dim = env_config.action_dim();
    let mut student = student_init.unwrap_or_else(|| {
        GaussianPolicy::new(&mut init_rng, obs_dim, act_dim, &cfg.student_hidden, Activation::Gelu)
    });
    assert_eq!(student.obs_dim(), obs_dim, "student must match the environment");
    assert_eq!(student.act_dim, act_dim, "student must match the environment");
    let mut opt = AdamState::new(AdamConfig::adam(cfg.bc_lr, 0.0));

    // The expert's deterministic evaluation return defines the bar.
    let mut expert_env = PianoEnv::new(env_config.clone(), goal.clone());
    let expert_record =
        run_episode(&mut expert_env, eval_seed, |obs| expert.deterministic_action(obs))?;
    let expert_return: Real = expert_record.rewards.iter().sum();
    let target_return = cfg.target_return_fraction * expert_return;

    let mut env = PianoEnv::new(env_config.clone(), goal.clone());
    let mut shards = Vec::new();
    let mut dataset_obs: Vec<Vec<Real>> = Vec::new();
    let mut dataset_act: Vec<Vec<Real>> = Vec::new();

    let store_relabeled = |record: EpisodeRecord,
                               seed: u64,
                               shards: &mut Vec<TrajectoryShard>,
                               dataset_obs: &mut Vec<Vec<Real>>,
                               dataset_act: &mut Vec<Vec<Real>>| {
        let relabeled: Vec<Vec<Real>> =
            record.observations.iter().map(|o| expert.deterministic_action(o)).collect();
        dataset_obs.extend(record.observations.iter().cloned());
        dataset_act.extend(relabeled.iter().cloned());
        shards.push(shard_from_episode(
            record,
            relabeled,
            label,
            Provenance::DaggerRelabeled,
            seed,
            env_config,
        ));
    };

    for _ in 0..cfg.warmup_trajectories {
        let seed: u64 = master.gen();
        let record = run_episode(&mut env, seed, |obs| expert.noisy_action(obs, &mut action_rng))?;
        store_relabeled(record, seed, &mut shards, &mut dataset_obs, &mut dataset_act);
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut final_return = Real::NEG_INFINITY;
    while iterations < cfg.max_iterations {
        iterations += 1;
        if !dataset_obs.is_empty() {
            for _ in 0..cfg.bc_steps_per_iteration {
                let batch = cfg.bc_batch.min(dataset_obs.len());
                let mut obs_flat = Vec::with_capacity(batch * obs_dim);
                let mut act_flat = Vec::with_capacity(batch * act_dim);
                for _ in 0..batch {
                    let i = bc_rng.gen_range(0..dataset_obs.len());
                    obs_flat.extend_from_slice(&dataset_obs[i]);
                    act_flat.extend_from_slice(&dataset_act[i]);
                }
                let obs_t = Tensor2::from_vec(batch, obs_dim, obs_flat);
                let act_t = Tensor2::from_vec(batch, act_dim, act_flat);
                bc_update(&mut student, &mut opt, &obs_t, &act_t);
            }
        }

        let mut eval_env = PianoEnv::new(env_config.clone(), goal.clone());
        let eval = run_episode(&mut eval_env, eval_seed, |obs| student.mean_action(obs))?;
        let ret: Real = eval.rewards.iter().sum();
        final_return = ret;
        if ret > target_return {
            converged = true;
            break;
        }

        // Student drives, expert relabels.
        let seed: u64 = master.gen();
        let record =
            run_episode(&mut env, seed, |obs| student.sample_action(obs, &mut action_rng))?;
        store_relabeled(record, seed, &mut shards, &mut dataset_obs, &mut dataset_act);
    }

    Ok(DaggerOutput {
        student,
        shards,
        iterations,
        expert_return,
        target_return,
        final_return,
        converged,
    })
}

/// Aggregate statistics over a shard set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Count of pressed observations per key, over all (step, key) pairs.
    pub pressed_key_histogram: Vec<u64>,
    /// Histogram over the number of simultaneously pressed keys per step.
    pub active_keys_per_step: Vec<u64>,
    pub f1_tags: Vec<Real>,
    /// Per song: mean pairwise distance between per-trajectory observation
    /// means.
    pub dispersion_by_song: Vec<(String, Real)>,
    pub total_steps: usize,
}

/// Computes dataset statistics; the environment config locates the
/// pressed-key block inside each stored observation.
pub fn dataset_stats(shards: &[TrajectoryShard], env_config: &EnvConfig) -> DatasetStats {
    assert!(!shards.is_empty(), "stats need at least one shard");
    let key_count = 88;
    let keys_at = pianoforte_core::GOAL_WIDTH * env_config.lookahead;
    let mut pressed = vec![0u64; key_count];
    let mut active_hist = vec![0u64; key_count + 1];
    let mut total_steps = 0;
    for shard in shards {
        for step in &shard.steps {
            let mut active = 0;
            for (k, count) in pressed.iter_mut().enumerate() {
                if step.observation[keys_at + k] >= env_config.activation_threshold {
                    *count += 1;
                    active += 1;
                }
            }
            active_hist[active] += 1;
            total_steps += 1;
        }
    }

    let mut by_song: Vec<(String, Vec<Vec<Real>>)> = Vec::new();
    for shard in shards {
        let mut mean = vec![0.0; shard.obs_dim];
        for step in &shard.steps {
            for (m, v) in mean.iter_mut().zip(&step.observation) {
                *m += v;
            }
        }
        let n = shard.steps.len().max(1) as Real;
        for m in &mut mean {
            *m /= n;
        }
        match by_song.iter_mut().find(|(s, _)| *s == shard.song_id) {
            Some((_, means)) => means.push(mean),
            None => by_song.push((shard.song_id.clone(), vec![mean])),
        }
    }
    let dispersion_by_song = by_song
        .into_iter()
        .map(|(song, means)| (song, mean_pairwise_distance(&means)))
        .collect();

    DatasetStats {
        pressed_key_histogram: pressed,
        active_keys_per_step: active_hist,
        f1_tags: shards.iter().map(|s| s.f1_tag).collect(),
        dispersion_by_song,
        total_steps,
    }
}

/// Mean Euclidean distance over all unordered pairs; 0 for fewer than two
/// points.
pub fn mean_pairwise_distance(points: &[Vec<Real>]) -> Real {
    if points.len() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: Real = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<Real>()
                .sqrt();
            sum += d;
            pairs += 1;
        }
    }
    sum / pairs as Real
}
