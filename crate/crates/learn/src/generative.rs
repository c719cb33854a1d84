//! Multi-song imitation policies over trajectory shards.
//!
//! A policy predicts a short action chunk conditioned on a stack of recent
//! observations and a scalar flow or diffusion time. Three heads share the
//! same backbone interface: conditional flow matching integrated with an
//! Euler solver, stochastic DDPM ancestral sampling, and deterministic
//! DDIM over a strided timestep subsequence. Actions are normalized per
//! dimension to [-1, 1] for training and denormalized at execution, with
//! the normalizer stored in the checkpoint. Execution is receding-horizon:
//! sample a chunk, run its first few actions, resample.

use std::collections::VecDeque;
use std::path::Path;

use crate::backbone::{Backbone, ChunkTransformer};
use crate::diffusion::{ddim_sample_with, ddpm_forward, ddpm_sample_with, DiffusionSchedule};
use crate::flow::{cfm_pair, euler_integrate};
use crate::shard::{TrajectoryShard, CANONICAL_ACT_DIM, CANONICAL_OBS_DIM};
use crate::{LearnError, Real};
use pianoforte_core::reward::score_episode;
use pianoforte_core::{EnvConfig, GoalMatrix, PianoEnv};
use pianoforte_nn::{
    cosine_lr, ema_decay, ema_update, load_checkpoint, save_checkpoint, AdamConfig, AdamState,
    Checkpoint, Tensor2,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Generative head used for both training targets and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyHead {
    FlowMatching,
    Ddpm,
    Ddim,
}

/// Denoising network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Mlp,
    Transformer,
}

/// Full architectural description of a multi-song policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub head: PolicyHead,
    pub backbone: BackboneKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Chunk length H_p predicted per query.
    pub pred_horizon: usize,
    /// Leading actions H_a executed before resampling; H_a <= H_p.
    pub action_horizon: usize,
    /// Observations H_o stacked into the conditioning context.
    pub obs_horizon: usize,
    pub inference_steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed: usize,
    /// Hidden sizes of the MLP backbone; ignored by the transformer.
    pub mlp_hidden: Vec<usize>,
    /// Diffusion training schedule length; ignored by flow matching.
    pub train_timesteps: usize,
    /// Extra interpolation noise for flow matching; the targets stay a1-a0.
    pub noise_sigma: Real,
    pub attn_dropout: Real,
}

impl PolicySpec {
    /// Desk-scale defaults; the full-size counterpart (12 layers, 12 heads,
    /// embed 768) is reachable through the same fields.
    pub fn desk(head: PolicyHead, backbone: BackboneKind) -> Self {
        PolicySpec {
            head,
            backbone,
            obs_dim: CANONICAL_OBS_DIM,
            act_dim: CANONICAL_ACT_DIM,
            pred_horizon: 4,
            action_horizon: 1,
            obs_horizon: 2,
            inference_steps: 10,
            layers: 4,
            heads: 4,
            embed: 128,
            mlp_hidden: vec![512, 512],
            train_timesteps: 50,
            noise_sigma: 0.0,
            attn_dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |msg: String| Err(LearnError::InvalidConfig(msg));
        if self.obs_dim == 0 || self.act_dim == 0 {
            return bad("observation and action widths must be positive".into());
        }
        if self.pred_horizon == 0 || self.obs_horizon == 0 {
            return bad("horizons must be positive".into());
        }
        if self.action_horizon == 0 || self.action_horizon > self.pred_horizon {
            return bad(format!(
                "action horizon {} must lie in 1..={}",
                self.action_horizon, self.pred_horizon
            ));
        }
        if self.inference_steps == 0 {
            return bad("need at least one inference step".into());
        }
        if self.head != PolicyHead::FlowMatching {
            if self.train_timesteps == 0 {
                return bad("diffusion heads need a nonzero training schedule".into());
            }
            if self.inference_steps > self.train_timesteps {
                return bad(format!(
                    "inference steps {} exceed the training schedule {}",
                    self.inference_steps, self.train_timesteps
                ));
            }
        }
        if self.noise_sigma < 0.0 {
            return bad("noise level must be nonnegative".into());
        }
        Ok(())
    }

    pub fn chunk_width(&self) -> usize {
        self.pred_horizon * self.act_dim
    }

    pub fn obs_width(&self) -> usize {
        self.obs_horizon * self.obs_dim
    }
}

/// Per-dimension affine map between raw actions and the [-1, 1] training
/// range. Constant dimensions get a unit-width window centered on their
/// value so the map stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNormalizer {
    pub lo: Vec<Real>,
    pub hi: Vec<Real>,
}

impl ActionNormalizer {
    pub fn fit(shards: &[TrajectoryShard], act_dim: usize) -> Self {
        let mut lo = vec![Real::INFINITY; act_dim];
        let mut hi = vec![Real::NEG_INFINITY; act_dim];
        for shard in shards {
            for step in &shard.steps {
                for (d, &a) in step.action.iter().enumerate() {
                    lo[d] = lo[d].min(a);
                    hi[d] = hi[d].max(a);
                }
            }
        }
        for d in 0..act_dim {
            if !lo[d].is_finite() || !hi[d].is_finite() || hi[d] - lo[d] < 1e-9 {
                let center = if lo[d].is_finite() { lo[d] } else { 0.0 };
                lo[d] = center - 0.5;
                hi[d] = center + 0.5;
            }
        }
        ActionNormalizer { lo, hi }
    }

    /// Identity map on [-1, 1], for data that is already unit scale.
    pub fn identity(act_dim: usize) -> Self {
        ActionNormalizer { lo: vec![-1.0; act_dim], hi: vec![1.0; act_dim] }
    }

    pub fn normalize(&self, raw: &[Real]) -> Vec<Real> {
        raw.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&x, (&lo, &hi))| 2.0 * (x - lo) / (hi - lo) - 1.0)
            .collect()
    }

    pub fn denormalize(&self, unit: &[Real]) -> Vec<Real> {
        unit.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&y, (&lo, &hi))| lo + 0.5 * (y + 1.0) * (hi - lo))
            .collect()
    }
}

/// One supervised example: a flattened observation stack and the
/// normalized action chunk starting at the same timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSample {
    pub obs: Vec<Real>,
    pub chunk: Vec<Real>,
}

/// Slices every shard into per-timestep chunk samples. The observation
/// stack pads early steps by repeating the first observation; the action
/// chunk pads past the end by repeating the last action.
pub fn chunk_dataset(
    shards: &[TrajectoryShard],
    spec: &PolicySpec,
    normalizer: &ActionNormalizer,
) -> Vec<ChunkSample> {
    let mut out = Vec::new();
    for shard in shards {
        let n = shard.steps.len();
        if n == 0 {
            continue;
        }
        for t in 0..n {
            let mut obs = Vec::with_capacity(spec.obs_width());
            for j in 0..spec.obs_horizon {
                let src = (t + j + 1).saturating_sub(spec.obs_horizon);
                obs.extend_from_slice(&shard.steps[src].observation);
            }
            let mut chunk = Vec::with_capacity(spec.chunk_width());
            for j in 0..spec.pred_horizon {
                let src = (t + j).min(n - 1);
                chunk.extend_from_slice(&normalizer.normalize(&shard.steps[src].action));
            }
            out.push(ChunkSample { obs, chunk });
        }
    }
    out
}

/// A ready supervised batch: noised inputs, per-row times, conditioning
/// stacks, and regression targets.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub inputs: Tensor2,
    pub ts: Vec<Real>,
    pub obs: Tensor2,
    pub targets: Tensor2,
}

/// Flow-matching batch: per row, a0 ~ N(0, I), t ~ U[0, 1], input
/// (1-t)a0 + t*a1 (+ sigma noise), target a1 - a0.
pub fn assemble_cfm_batch<R: Rng>(
    rng: &mut R,
    samples: &[&ChunkSample],
    sigma: Real,
) -> PreparedBatch {
    assert!(!samples.is_empty());
    let w = samples[0].chunk.len();
    let ow = samples[0].obs.len();
    let mut inputs = Tensor2::zeros(samples.len(), w);
    let mut obs = Tensor2::zeros(samples.len(), ow);
    let mut targets = Tensor2::zeros(samples.len(), w);
    let mut ts = Vec::with_capacity(samples.len());
    for (r, s) in samples.iter().enumerate() {
        let pair = cfm_pair(rng, &s.chunk);
        let row = inputs.row_mut(r);
        row.copy_from_slice(&pair.x_t);
        if sigma > 0.0 {
            for v in row.iter_mut() {
                *v += sigma * rng.sample::<Real, _>(StandardNormal);
            }
        }
        ts.push(pair.t);
        obs.row_mut(r).copy_from_slice(&s.obs);
        targets.row_mut(r).copy_from_slice(&pair.target);
    }
    PreparedBatch { inputs, ts, obs, targets }
}

/// Diffusion batch: per row, k ~ U{0..T-1}, input from the closed-form
/// forward jump, target the injected noise.
pub fn assemble_diffusion_batch<R: Rng>(
    rng: &mut R,
    samples: &[&ChunkSample],
    schedule: &DiffusionSchedule,
) -> PreparedBatch {
    assert!(!samples.is_empty());
    let w = samples[0].chunk.len();
    let ow = samples[0].obs.len();
    let mut inputs = Tensor2::zeros(samples.len(), w);
    let mut obs = Tensor2::zeros(samples.len(), ow);
    let mut targets = Tensor2::zeros(samples.len(), w);
    let mut ts = Vec::with_capacity(samples.len());
    for (r, s) in samples.iter().enumerate() {
        let k = rng.gen_range(0..schedule.len());
        let (xk, eps) = ddpm_forward(rng, &s.chunk, k, schedule);
        inputs.row_mut(r).copy_from_slice(&xk);
        ts.push(k as Real);
        obs.row_mut(r).copy_from_slice(&s.obs);
        targets.row_mut(r).copy_from_slice(&eps);
    }
    PreparedBatch { inputs, ts, obs, targets }
}

/// Mean squared error plus its gradients in backbone parameter order.
pub fn batch_loss_and_grads<R: Rng>(
    backbone: &Backbone,
    batch: &PreparedBatch,
    train: bool,
    rng: &mut R,
) -> (Real, Vec<Tensor2>) {
    let (pred, cache) = backbone.forward_batch(&batch.inputs, &batch.ts, &batch.obs, train, rng);
    let n = (pred.rows * pred.cols) as Real;
    let mut loss = 0.0;
    let mut upstream = Tensor2::zeros(pred.rows, pred.cols);
    for i in 0..pred.data.len() {
        let err = pred.data[i] - batch.targets.data[i];
        loss += err * err / n;
        upstream.data[i] = 2.0 * err / n;
    }
    (loss, backbone.backward_batch(&cache, &upstream))
}

/// Evaluates an arbitrary per-row predictor against a prepared batch.
/// Used to check the loss plumbing against hand-built predictors.
pub fn batch_loss_of(
    mut predict: impl FnMut(usize, &[Real], Real, &[Real]) -> Vec<Real>,
    batch: &PreparedBatch,
) -> Real {
    let n = (batch.targets.rows * batch.targets.cols) as Real;
    let mut loss = 0.0;
    for r in 0..batch.targets.rows {
        let pred = predict(r, batch.inputs.row(r), batch.ts[r], batch.obs.row(r));
        assert_eq!(pred.len(), batch.targets.cols);
        for (p, t) in pred.iter().zip(batch.targets.row(r)) {
            loss += (p - t) * (p - t) / n;
        }
    }
    loss
}

/// A trained (or training) multi-song policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativePolicy {
    pub spec: PolicySpec,
    pub backbone: Backbone,
    pub normalizer: ActionNormalizer,
}

impl GenerativePolicy {
    pub fn new<R: Rng>(
        rng: &mut R,
        spec: PolicySpec,
        normalizer: ActionNormalizer,
    ) -> Result<Self, LearnError> {
        spec.validate()?;
        if normalizer.lo.len() != spec.act_dim || normalizer.hi.len() != spec.act_dim {
            return Err(LearnError::InvalidConfig(format!(
                "normalizer covers {} dims, policy needs {}",
                normalizer.lo.len(),
                spec.act_dim
            )));
        }
        let backbone = match spec.backbone {
            BackboneKind::Mlp => Backbone::new_mlp(
                rng,
                spec.act_dim,
                spec.obs_dim,
                spec.pred_horizon,
                spec.obs_horizon,
                &spec.mlp_hidden,
            ),
            BackboneKind::Transformer => Backbone::Transformer(Box::new(ChunkTransformer::new(
                rng,
                spec.act_dim,
                spec.obs_dim,
                spec.pred_horizon,
                spec.obs_horizon,
                spec.layers,
                spec.heads,
                spec.embed,
                spec.attn_dropout,
            ))),
        };
        Ok(GenerativePolicy { spec, backbone, normalizer })
    }

    pub fn schedule(&self) -> DiffusionSchedule {
        DiffusionSchedule::squaredcos_cap_v2(self.spec.train_timesteps)
    }

    /// Eval-mode backbone query on one flattened chunk row.
    fn predict_row(&self, x: &[Real], t: Real, obs: &[Real]) -> Vec<Real> {
        let inputs = Tensor2::from_vec(1, x.len(), x.to_vec());
        let obs_t = Tensor2::from_vec(1, obs.len(), obs.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = self.backbone.forward_batch(&inputs, &[t], &obs_t, false, &mut rng);
        out.data
    }

    /// Draws one normalized action chunk for a flattened observation stack.
    pub fn sample_chunk<R: Rng>(&self, obs: &[Real], rng: &mut R) -> Vec<Real> {
        assert_eq!(obs.len(), self.spec.obs_width());
        let w = self.spec.chunk_width();
        let init: Vec<Real> = (0..w).map(|_| rng.sample(StandardNormal)).collect();
        match self.spec.head {
            PolicyHead::FlowMatching => self.integrate_flow(obs, &init, self.spec.inference_steps),
            PolicyHead::Ddim => ddim_sample_with(
                |x, k| self.predict_row(x, k as Real, obs),
                &self.schedule(),
                &init,
                self.spec.inference_steps,
            ),
            PolicyHead::Ddpm => ddpm_sample_with(
                |x, k| self.predict_row(x, k as Real, obs),
                &self.schedule(),
                &init,
                rng,
            ),
        }
    }

    /// Euler-integrates the learned velocity field from a given start, so
    /// callers can pair different step counts on one noise draw.
    pub fn integrate_flow(&self, obs: &[Real], init: &[Real], steps: usize) -> Vec<Real> {
        euler_integrate(|a, t| self.predict_row(a, t, obs), init, steps)
    }
}

/// Receding-horizon execution state: an observation history and the tail
/// of the last sampled chunk.
#[derive(Debug, Clone, Default)]
pub struct ChunkActor {
    history: VecDeque<Vec<Real>>,
    pending: VecDeque<Vec<Real>>,
}

impl ChunkActor {
    pub fn new() -> Self {
        ChunkActor::default()
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.pending.clear();
    }

    /// Queued actions left from the last sampled chunk.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Records an observation and returns the next action, denormalized
    /// and clipped to [-1, 1]. Histories shorter than the observation
    /// horizon pad by repeating their first entry.
    pub fn act<R: Rng>(
        &mut self,
        policy: &GenerativePolicy,
        obs: &[Real],
        rng: &mut R,
    ) -> Vec<Real> {
        assert_eq!(obs.len(), policy.spec.obs_dim);
        self.history.push_back(obs.to_vec());
        while self.history.len() > policy.spec.obs_horizon {
            self.history.pop_front();
        }
        if self.pending.is_empty() {
            let h_o = policy.spec.obs_horizon;
            let mut stack = Vec::with_capacity(policy.spec.obs_width());
            for j in 0..h_o {
                let src = (j + self.history.len()).saturating_sub(h_o).min(self.history.len() - 1);
                stack.extend_from_slice(&self.history[src]);
            }
            let chunk = policy.sample_chunk(&stack, rng);
            for j in 0..policy.spec.action_horizon {
                let row = &chunk[j * policy.spec.act_dim..(j + 1) * policy.spec.act_dim];
                let action: Vec<Real> =
                    policy.normalizer.denormalize(row).iter().map(|a| a.clamp(-1.0, 1.0)).collect();
                self.pending.push_back(action);
            }
        }
        self.pending.pop_front().expect("chunk sampling queued at least one action")
    }
}

/// Rolls the policy out on one goal and scores it. Returns (return, F1).
pub fn evaluate_generative(
    policy: &GenerativePolicy,
    env_config: &EnvConfig,
    goal: &GoalMatrix,
    seed: u64,
) -> Result<(Real, Real), LearnError> {
    let mut cfg = env_config.clone();
    cfg.episode_len = 0;
    let mut env = PianoEnv::new(cfg, goal.clone());
    let mut actor = ChunkActor::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = env.reset(seed);
    let mut pressed = Vec::with_capacity(goal.steps);
    let mut ret = 0.0;
    loop {
        let action = actor.act(policy, &obs, &mut rng);
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

/// Optimizer and schedule settings for multi-song training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr: Real,
    pub weight_decay: Real,
    pub min_lr: Real,
    pub warmup_steps: usize,
    /// Per-component gradient clip, bounding the update's infinity norm.
    pub grad_clip: Real,
    pub ema_power: Real,
    pub ema_max_decay: Real,
    /// Steps between rollout evaluations; 0 disables periodic evaluation.
    pub eval_interval: usize,
    /// Stop once the mean evaluation F1 reaches this value.
    pub early_stop_f1: Option<Real>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            total_steps: 20_000,
            lr: 1e-4,
            weight_decay: 1e-3,
            min_lr: 1e-6,
            warmup_steps: 1000,
            grad_clip: 0.1,
            ema_power: 0.75,
            ema_max_decay: 0.9999,
            eval_interval: 0,
            early_stop_f1: None,
            seed: 0,
        }
    }
}

/// One logged training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainPoint {
    pub step: usize,
    pub loss: Real,
    pub lr: Real,
    /// Mean rollout F1 when this step ran an evaluation.
    pub eval_f1: Option<Real>,
}

/// Result of a multi-song training run. The returned policy carries the
/// EMA weights.
#[derive(Debug)]
pub struct MultisongOutput {
    pub policy: GenerativePolicy,
    pub curve: Vec<TrainPoint>,
    /// Final per-goal (name, F1) scores over the evaluation suite.
    pub eval_f1: Vec<(String, Real)>,
    pub steps_run: usize,
    pub early_stopped: bool,
}

fn with_params(policy: &GenerativePolicy, params: &[Tensor2]) -> GenerativePolicy {
    let mut out = policy.clone();
    for (dst, src) in out.backbone.params_mut().into_iter().zip(params) {
        *dst = src.clone();
    }
    out
}

/// Trains one policy on a shard set with AdamW under a warmup-cosine
/// schedule, keeping an EMA shadow that periodic and final evaluations
/// (and the returned policy) use.
pub fn train_multisong(
    spec: &PolicySpec,
    shards: &[TrajectoryShard],
    eval_suite: &[(String, GoalMatrix)],
    env_config: &EnvConfig,
    cfg: &TrainConfig,
) -> Result<MultisongOutput, LearnError> {
    if shards.is_empty() {
        return Err(LearnError::InvalidConfig("need at least one training shard".into()));
    }
    for shard in shards {
        if shard.obs_dim != spec.obs_dim || shard.act_dim != spec.act_dim {
            return Err(LearnError::InvalidConfig(format!(
                "shard {}/{} is {}x{}, policy expects {}x{}",
                shard.song_id,
                shard.clip_index,
                shard.obs_dim,
                shard.act_dim,
                spec.obs_dim,
                spec.act_dim
            )));
        }
    }
    let normalizer = ActionNormalizer::fit(shards, spec.act_dim);
    let dataset = chunk_dataset(shards, spec, &normalizer);
    if dataset.is_empty() {
        return Err(LearnError::InvalidConfig("shards contain no steps".into()));
    }

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let eval_seed: u64 = master.gen();

    let mut policy = GenerativePolicy::new(&mut init_rng, spec.clone(), normalizer)?;
    let schedule = match spec.head {
        PolicyHead::FlowMatching => None,
        _ => Some(policy.schedule()),
    };
    let names = policy.backbone.param_names();
    let mut opt = AdamState::new(
        AdamConfig::adamw(cfg.lr, cfg.weight_decay).with_grad_clip(cfg.grad_clip),
    );
    let mut shadows: Vec<Tensor2> =
        policy.backbone.params().into_iter().cloned().collect();

    let mut curve = Vec::with_capacity(cfg.total_steps);
    let mut early_stopped = false;
    let mut steps_run = 0;

    for step in 0..cfg.total_steps {
        opt.config.lr = cosine_lr(
            step as u64,
            cfg.lr,
            cfg.warmup_steps as u64,
            cfg.total_steps as u64,
            cfg.min_lr,
        );
        let batch: Vec<&ChunkSample> = (0..cfg.batch_size)
            .map(|_| &dataset[batch_rng.gen_range(0..dataset.len())])
            .collect();
        let prepared = match &schedule {
            None => assemble_cfm_batch(&mut batch_rng, &batch, spec.noise_sigma),
            Some(s) => assemble_diffusion_batch(&mut batch_rng, &batch, s),
        };
        let (loss, grads) =
            batch_loss_and_grads(&policy.backbone, &prepared, true, &mut batch_rng);
        let named_grads: Vec<(String, &Tensor2)> =
            names.iter().cloned().zip(grads.iter()).collect();
        let named_params: Vec<(String, &mut Tensor2)> =
            names.iter().cloned().zip(policy.backbone.params_mut()).collect();
        opt.step_all(named_params, &named_grads);

        let decay = ema_decay((step + 1) as u64, cfg.ema_power, cfg.ema_max_decay);
        for (shadow, param) in shadows.iter_mut().zip(policy.backbone.params()) {
            ema_update(shadow, param, decay);
        }
        steps_run = step + 1;

        let mut point = TrainPoint { step: steps_run, loss, lr: opt.config.lr, eval_f1: None };
        let due = cfg.eval_interval > 0 && steps_run % cfg.eval_interval == 0;
        if due && !eval_suite.is_empty() {
            let ema_policy = with_params(&policy, &shadows);
            let mut total = 0.0;
            for (_, goal) in eval_suite {
                let (_, f1) = evaluate_generative(&ema_policy, env_config, goal, eval_seed)?;
                total += f1;
            }
            let mean = total / eval_suite.len() as Real;
            point.eval_f1 = Some(mean);
            curve.push(point);
            if cfg.early_stop_f1.is_some_and(|th| mean >= th) {
                early_stopped = true;
                break;
            }
        } else {
            curve.push(point);
        }
    }

    let policy = with_params(&policy, &shadows);
    let mut eval_f1 = Vec::with_capacity(eval_suite.len());
    for (name, goal) in eval_suite {
        let (_, f1) = evaluate_generative(&policy, env_config, goal, eval_seed)?;
        eval_f1.push((name.clone(), f1));
    }
    Ok(MultisongOutput { policy, curve, eval_f1, steps_run, early_stopped })
}

/// Provenance carried inside a policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeMeta {
    pub song_ids: Vec<String>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct GenerativeHeader {
    kind: String,
    spec: PolicySpec,
    normalizer: ActionNormalizer,
    meta: GenerativeMeta,
}

const GENERATIVE_KIND: &str = "generative-policy";

pub fn save_generative_checkpoint(
    path: &Path,
    policy: &GenerativePolicy,
    meta: &GenerativeMeta,
) -> Result<(), LearnError> {
    let header = GenerativeHeader {
        kind: GENERATIVE_KIND.to_string(),
        spec: policy.spec.clone(),
        normalizer: policy.normalizer.clone(),
        meta: meta.clone(),
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| LearnError::CheckpointMismatch(e.to_string()))?;
    let mut ck = Checkpoint::new(json);
    for (name, param) in policy.backbone.param_names().into_iter().zip(policy.backbone.params()) {
        ck.push(name, param.clone());
    }
    save_checkpoint(path, &ck)?;
    Ok(())
}

pub fn load_generative_checkpoint(
    path: &Path,
) -> Result<(GenerativePolicy, GenerativeMeta), LearnError> {
    let ck = load_checkpoint(path)?;
    let header: GenerativeHeader = serde_json::from_str(&ck.spec_json)
        .map_err(|e| LearnError::CheckpointMismatch(e.to_string()))?;
    if header.kind != GENERATIVE_KIND {
        return Err(LearnError::CheckpointMismatch(format!(
            "expected a {GENERATIVE_KIND} checkpoint, found {:?}",
            header.kind
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut policy = GenerativePolicy::new(&mut rng, header.spec, header.normalizer)?;
    let names = policy.backbone.param_names();
    for (name, param) in names.into_iter().zip(policy.backbone.params_mut()) {
        let blob = ck.require(&name)?;
        if blob.shape() != param.shape() {
            return Err(LearnError::CheckpointMismatch(format!(
                "blob {name} is {:?}, expected {:?}",
                blob.shape(),
                param.shape()
            )));
        }
        *param = blob.clone();
    }
    Ok((policy, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shard::{Provenance, ShardStep};

    fn toy_shard(song: &str, actions: Vec<Vec<Real>>, obs: Vec<Vec<Real>>) -> TrajectoryShard {
        assert_eq!(actions.len(), obs.len());
        let obs_dim = obs[0].len();
        let act_dim = actions[0].len();
        TrajectoryShard {
            song_id: song.to_string(),
            clip_index: 0,
            f1_tag: 1.0,
            provenance: Provenance::ExpertRollout,
            seed: 0,
            obs_dim,
            act_dim,
            steps: obs
                .into_iter()
                .zip(actions)
                .map(|(observation, action)| ShardStep { observation, action, reward: 0.0 })
                .collect(),
        }
    }

    fn scalar_spec(head: PolicyHead) -> PolicySpec {
        PolicySpec {
            head,
            backbone: BackboneKind::Mlp,
            obs_dim: 1,
            act_dim: 1,
            pred_horizon: 1,
            action_horizon: 1,
            obs_horizon: 1,
            inference_steps: 25,
            layers: 1,
            heads: 1,
            embed: 8,
            mlp_hidden: vec![64, 64],
            train_timesteps: 10,
            noise_sigma: 0.0,
            attn_dropout: 0.0,
        }
    }

    #[test]
    fn spec_validation_rejects_bad_horizons_and_steps() {
        let mut spec = PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Transformer);
        assert!(spec.validate().is_ok());
        spec.action_horizon = spec.pred_horizon + 1;
        assert!(spec.validate().is_err());
        let mut spec = PolicySpec::desk(PolicyHead::Ddim, BackboneKind::Mlp);
        spec.inference_steps = spec.train_timesteps + 1;
        assert!(spec.validate().is_err());
        spec.inference_steps = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn normalizer_round_trips_and_handles_constant_dims() {
        let shard = toy_shard(
            "a",
            vec![vec![0.2, 5.0, -3.0], vec![0.2, 7.0, 1.0], vec![0.2, 6.0, -1.0]],
            vec![vec![0.0]; 3],
        );
        let norm = ActionNormalizer::fit(&[shard], 3);
        // Constant dimension gets a unit window around its value.
        assert_eq!(norm.lo[0], 0.2 - 0.5);
        assert_eq!(norm.hi[0], 0.2 + 0.5);
        assert_eq!((norm.lo[1], norm.hi[1]), (5.0, 7.0));
        let raw = vec![0.2, 6.3, -2.1];
        let unit = norm.normalize(&raw);
        assert!(unit.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = norm.denormalize(&unit);
        for (a, b) in raw.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        // Extremes map to the interval endpoints.
        assert!((norm.normalize(&[0.2, 5.0, -3.0])[1] + 1.0).abs() < 1e-12);
        assert!((norm.normalize(&[0.2, 7.0, -3.0])[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chunk_dataset_pads_both_ends() {
        let shard = toy_shard(
            "a",
            vec![vec![0.0, 0.1], vec![1.0, 1.1], vec![2.0, 2.1]],
            vec![vec![10.0], vec![11.0], vec![12.0]],
        );
        let spec = PolicySpec {
            obs_dim: 1,
            act_dim: 2,
            pred_horizon: 4,
            obs_horizon: 2,
            ..PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Mlp)
        };
        let norm = ActionNormalizer::identity(2);
        let data = chunk_dataset(&[shard], &spec, &norm);
        assert_eq!(data.len(), 3);
        // First step: observation stack repeats the first observation.
        assert_eq!(data[0].obs, vec![10.0, 10.0]);
        assert_eq!(data[1].obs, vec![10.0, 11.0]);
        assert_eq!(data[2].obs, vec![11.0, 12.0]);
        // Chunks repeat the final action past the end of the shard. The
        // identity normalizer is affine, so compare up to rounding.
        let close = |a: &[Real], b: &[Real]| {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        };
        close(&data[0].chunk, &[0.0, 0.1, 1.0, 1.1, 2.0, 2.1, 2.0, 2.1]);
        close(&data[2].chunk, &[2.0, 2.1, 2.0, 2.1, 2.0, 2.1, 2.0, 2.1]);
    }

    #[test]
    fn cfm_loss_is_zero_for_the_true_velocity_and_matches_variance_for_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Synthetic unit-variance-ish chunks: a1 ~ N(0, 0.5^2).
        let samples: Vec<ChunkSample> = (0..4000)
            .map(|_| ChunkSample {
                obs: vec![0.0],
                chunk: vec![0.5 * rng.sample::<Real, _>(StandardNormal)],
            })
            .collect();
        let refs: Vec<&ChunkSample> = samples.iter().collect();
        let batch = assemble_cfm_batch(&mut rng, &refs, 0.0);
        // Predictor hard-wired to the exact velocity target.
        let oracle = batch_loss_of(|r, _, _, _| batch.targets.row(r).to_vec(), &batch);
        assert_eq!(oracle, 0.0);
        // Zero predictor: E[(a1 - a0)^2] = Var(a1) + 1 = 1.25.
        let zero = batch_loss_of(|_, x, _, _| vec![0.0; x.len()], &batch);
        assert!((zero - 1.25).abs() < 0.06, "zero-net loss {zero}, expected about 1.25");
    }

    #[test]
    fn flow_matching_recovers_a_bimodal_action_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 70/30 mixture of two tight Gaussians at -0.5 and +0.5.
        let samples: Vec<ChunkSample> = (0..4000)
            .map(|_| {
                let mode = if rng.gen::<Real>() < 0.7 { -0.5 } else { 0.5 };
                let a = mode + 0.05 * rng.sample::<Real, _>(StandardNormal);
                ChunkSample { obs: vec![0.0], chunk: vec![a] }
            })
            .collect();
        let spec = scalar_spec(PolicyHead::FlowMatching);
        let mut policy =
            GenerativePolicy::new(&mut rng, spec, ActionNormalizer::identity(1)).unwrap();
        let mut opt = AdamState::new(AdamConfig::adamw(2e-3, 1e-6).with_grad_clip(1.0));
        let names = policy.backbone.param_names();
        for step in 0..1500 {
            opt.config.lr = cosine_lr(step, 2e-3, 50, 1500, 1e-5);
            let batch: Vec<&ChunkSample> =
                (0..256).map(|_| &samples[rng.gen_range(0..samples.len())]).collect();
            let prepared = assemble_cfm_batch(&mut rng, &batch, 0.0);
            let (_, grads) = batch_loss_and_grads(&policy.backbone, &prepared, true, &mut rng);
            let named_grads: Vec<(String, &Tensor2)> =
                names.iter().cloned().zip(grads.iter()).collect();
            let named_params: Vec<(String, &mut Tensor2)> =
                names.iter().cloned().zip(policy.backbone.params_mut()).collect();
            opt.step_all(named_params, &named_grads);
        }
        let mut low = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let chunk = policy.sample_chunk(&[0.0], &mut rng);
            if chunk[0] < 0.0 {
                low += 1;
            }
        }
        let share = low as Real / n as Real;
        assert!(
            (share - 0.7).abs() <= 0.07,
            "low-mode mass {share}, expected 0.70 within 0.07"
        );

        // Discretization stability on the same trained field: 10-step and
        // 1000-step integration from identical noise draws should agree
        // except for rare starts near the mode boundary.
        let mut diffs = Vec::new();
        for _ in 0..50 {
            let a0 = vec![rng.sample::<Real, _>(StandardNormal)];
            let coarse = policy.integrate_flow(&[0.0], &a0, 10);
            let fine = policy.integrate_flow(&[0.0], &a0, 1000);
            diffs.push((coarse[0] - fine[0]).abs());
        }
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = diffs[diffs.len() / 2];
        let far = diffs.iter().filter(|d| **d > 0.25).count();
        assert!(median < 0.05, "median 10-vs-1000-step gap {median}");
        assert!(far <= 5, "{far} of 50 draws moved more than 0.25 between step counts");
    }

    #[test]
    fn diffusion_heads_learn_a_constant_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<ChunkSample> =
            (0..256).map(|_| ChunkSample { obs: vec![0.0], chunk: vec![0.0] }).collect();
        let mut spec = scalar_spec(PolicyHead::Ddim);
        spec.inference_steps = 10;
        // Raw actions were constant 0.3, so the fitted normalizer maps that
        // value to 0; mimic it directly.
        let norm = ActionNormalizer { lo: vec![0.3 - 0.5], hi: vec![0.3 + 0.5] };
        let mut policy = GenerativePolicy::new(&mut rng, spec, norm).unwrap();
        let schedule = policy.schedule();
        let mut opt = AdamState::new(AdamConfig::adamw(3e-3, 1e-6).with_grad_clip(1.0));
        let names = policy.backbone.param_names();
        for _ in 0..800 {
            let batch: Vec<&ChunkSample> =
                (0..128).map(|_| &samples[rng.gen_range(0..samples.len())]).collect();
            let prepared = assemble_diffusion_batch(&mut rng, &batch, &schedule);
            let (_, grads) = batch_loss_and_grads(&policy.backbone, &prepared, true, &mut rng);
            let named_grads: Vec<(String, &Tensor2)> =
                names.iter().cloned().zip(grads.iter()).collect();
            let named_params: Vec<(String, &mut Tensor2)> =
                names.iter().cloned().zip(policy.backbone.params_mut()).collect();
            opt.step_all(named_params, &named_grads);
        }
        let mut mean_ddim = 0.0;
        for _ in 0..5 {
            let chunk = policy.sample_chunk(&[0.0], &mut rng);
            mean_ddim += policy.normalizer.denormalize(&chunk)[0] / 5.0;
        }
        assert!((mean_ddim - 0.3).abs() < 0.1, "ddim recovered {mean_ddim}, wanted 0.3");
        policy.spec.head = PolicyHead::Ddpm;
        let mut mean_ddpm = 0.0;
        for _ in 0..20 {
            let chunk = policy.sample_chunk(&[0.0], &mut rng);
            mean_ddpm += policy.normalizer.denormalize(&chunk)[0] / 20.0;
        }
        assert!((mean_ddpm - 0.3).abs() < 0.1, "ddpm recovered {mean_ddpm}, wanted 0.3");
    }

    #[test]
    fn loss_decreases_over_the_first_hundred_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Structured data: each action dimension is an affine map of obs.
        let samples: Vec<ChunkSample> = (0..512)
            .map(|_| {
                let o: Vec<Real> = (0..6).map(|_| rng.gen::<Real>() - 0.5).collect();
                let base = 0.8 * o[0] - 0.4 * o[3];
                ChunkSample {
                    obs: [o.clone(), o].concat(),
                    chunk: vec![base, -base, 0.5 * base, base.abs() - 0.3],
                }
            })
            .collect();
        let spec = PolicySpec {
            head: PolicyHead::FlowMatching,
            backbone: BackboneKind::Transformer,
            obs_dim: 6,
            act_dim: 2,
            pred_horizon: 2,
            obs_horizon: 2,
            layers: 1,
            heads: 2,
            embed: 16,
            ..PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Transformer)
        };
        let mut policy =
            GenerativePolicy::new(&mut rng, spec, ActionNormalizer::identity(2)).unwrap();
        let mut opt = AdamState::new(AdamConfig::adamw(1e-3, 1e-6).with_grad_clip(1.0));
        let names = policy.backbone.param_names();
        let mut losses = Vec::new();
        for _ in 0..100 {
            let batch: Vec<&ChunkSample> =
                (0..32).map(|_| &samples[rng.gen_range(0..samples.len())]).collect();
            let prepared = assemble_cfm_batch(&mut rng, &batch, 0.0);
            let (loss, grads) =
                batch_loss_and_grads(&policy.backbone, &prepared, true, &mut rng);
            losses.push(loss);
            let named_grads: Vec<(String, &Tensor2)> =
                names.iter().cloned().zip(grads.iter()).collect();
            let named_params: Vec<(String, &mut Tensor2)> =
                names.iter().cloned().zip(policy.backbone.params_mut()).collect();
            opt.step_all(named_params, &named_grads);
        }
        let first: Real = losses[..10].iter().sum::<Real>() / 10.0;
        let last: Real = losses[90..].iter().sum::<Real>() / 10.0;
        assert!(last < first, "loss went from {first} to {last}");
    }

    #[test]
    fn zeroing_the_observation_projection_severs_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let spec = PolicySpec {
            obs_dim: 5,
            act_dim: 3,
            pred_horizon: 2,
            obs_horizon: 2,
            layers: 2,
            heads: 2,
            embed: 16,
            inference_steps: 5,
            ..PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Transformer)
        };
        let policy =
            GenerativePolicy::new(&mut rng, spec, ActionNormalizer::identity(3)).unwrap();
        let obs_a: Vec<Real> = (0..10).map(|i| i as Real * 0.1).collect();
        let obs_b: Vec<Real> = (0..10).map(|i| -(i as Real) * 0.07).collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let out_a = policy.sample_chunk(&obs_a, &mut r1);
        let out_b = policy.sample_chunk(&obs_b, &mut r2);
        assert_ne!(out_a, out_b, "observations must reach the samples");

        let mut severed = policy.clone();
        if let Backbone::Transformer(t) = &mut severed.backbone {
            for v in t.obs_proj.weight.data.iter_mut() {
                *v = 0.0;
            }
        } else {
            panic!("expected a transformer backbone");
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let out_a = severed.sample_chunk(&obs_a, &mut r1);
        let out_b = severed.sample_chunk(&obs_b, &mut r2);
        assert_eq!(
            out_a, out_b,
            "with the projection zeroed, different observations must collapse"
        );
    }

    #[test]
    fn actor_consumes_whole_chunks_and_repeats_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let spec = PolicySpec {
            obs_dim: 3,
            act_dim: 2,
            pred_horizon: 2,
            action_horizon: 2,
            obs_horizon: 2,
            inference_steps: 4,
            mlp_hidden: vec![16],
            ..PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Mlp)
        };
        let policy =
            GenerativePolicy::new(&mut rng, spec, ActionNormalizer::identity(2)).unwrap();
        let obs = vec![0.1, 0.2, 0.3];

        // H_a = H_p: one sample feeds exactly two acts.
        let mut actor = ChunkActor::new();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let a1 = actor.act(&policy, &obs, &mut r);
        assert_eq!(actor.pending(), 1);
        let a2 = actor.act(&policy, &obs, &mut r);
        assert_eq!(actor.pending(), 0);
        assert_ne!(a1, a2, "chunk rows are distinct actions");
        assert!(a1.iter().chain(&a2).all(|v| (-1.0..=1.0).contains(v)));

        // Identical histories and rng seeds give identical actions.
        let mut actor_a = ChunkActor::new();
        let mut actor_b = ChunkActor::new();
        let mut ra = ChaCha8Rng::seed_from_u64(9);
        let mut rb = ChaCha8Rng::seed_from_u64(9);
        for step in 0..4 {
            let o: Vec<Real> = obs.iter().map(|v| v + step as Real).collect();
            assert_eq!(actor_a.act(&policy, &o, &mut ra), actor_b.act(&policy, &o, &mut rb));
        }

        // A single observation pads the stack by repeating itself.
        let mut actor = ChunkActor::new();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let from_actor = actor.act(&policy, &obs, &mut r);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let stacked: Vec<Real> = [obs.clone(), obs.clone()].concat();
        let chunk = policy.sample_chunk(&stacked, &mut r);
        let manual: Vec<Real> = policy.normalizer.denormalize(&chunk[..2])
            .iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        assert_eq!(from_actor, manual);
    }

    #[test]
    fn rollout_evaluation_returns_a_valid_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let env_config = EnvConfig { lookahead: 2, ..EnvConfig::default() };
        let mut goal = GoalMatrix::new("toy", 8, env_config.lookahead, env_config.control_dt);
        for t in 2..6 {
            goal.set(t, 39, true);
        }
        let spec = PolicySpec {
            obs_dim: env_config.obs_dim(),
            act_dim: env_config.action_dim(),
            pred_horizon: 2,
            obs_horizon: 2,
            inference_steps: 4,
            mlp_hidden: vec![32],
            ..PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Mlp)
        };
        let norm = ActionNormalizer::identity(env_config.action_dim());
        let policy = GenerativePolicy::new(&mut rng, spec, norm).unwrap();
        let (ret, f1) = evaluate_generative(&policy, &env_config, &goal, 4).unwrap();
        assert!(ret.is_finite());
        assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn multisong_training_runs_and_improves_on_one_toy_song() {
        // Synthetic shard whose actions depend on a 2-wide observation.
        let steps = 40;
        let mut obs = Vec::with_capacity(steps);
        let mut actions = Vec::with_capacity(steps);
        for t in 0..steps {
            let phase = t as Real / steps as Real;
            let o = vec![phase, 1.0 - phase];
            actions.push(vec![0.6 * phase - 0.3, 0.2 - 0.4 * phase, phase * phase]);
            obs.push(o);
        }
        let shard = toy_shard("song-a", actions, obs);
        let spec = PolicySpec {
            obs_dim: 2,
            act_dim: 3,
            pred_horizon: 2,
            obs_horizon: 2,
            inference_steps: 8,
            mlp_hidden: vec![32, 32],
            ..PolicySpec::desk(PolicyHead::FlowMatching, BackboneKind::Mlp)
        };
        let cfg = TrainConfig {
            batch_size: 64,
            total_steps: 150,
            lr: 2e-3,
            warmup_steps: 10,
            grad_clip: 1.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train_multisong(&spec, &[shard], &[], &EnvConfig::default(), &cfg).unwrap();
        assert_eq!(out.steps_run, 150);
        assert_eq!(out.curve.len(), 150);
        assert!(!out.early_stopped);
        let first: Real = out.curve[..10].iter().map(|p| p.loss).sum::<Real>() / 10.0;
        let last: Real = out.curve[140..].iter().map(|p| p.loss).sum::<Real>() / 10.0;
        assert!(last < first, "training loss went from {first} to {last}");
        // Warmup then decay: the configured peak is visited, the end is low.
        assert!(out.curve[0].lr < 2e-3 * 0.2);
        assert!(out.curve.iter().map(|p| p.lr).fold(0.0, Real::max) > 1e-3);
        assert!(out.curve.last().unwrap().lr < 1e-4);
    }

    #[test]
    fn checkpoints_round_trip_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let spec = PolicySpec {
            obs_dim: 4,
            act_dim: 2,
            pred_horizon: 2,
            obs_horizon: 2,
            layers: 1,
            heads: 2,
            embed: 16,
            inference_steps: 6,
            ..PolicySpec::desk(PolicyHead::Ddim, BackboneKind::Transformer)
        };
        let norm = ActionNormalizer { lo: vec![-0.3, 0.1], hi: vec![0.9, 0.2 + 1.0] };
        let policy = GenerativePolicy::new(&mut rng, spec, norm).unwrap();
        let meta = GenerativeMeta { song_ids: vec!["a".into(), "b".into()], seed: 17 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.pfnn");
        save_generative_checkpoint(&path, &policy, &meta).unwrap();
        let (loaded, loaded_meta) = load_generative_checkpoint(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.spec, policy.spec);
        assert_eq!(loaded.normalizer, policy.normalizer);
        assert_eq!(loaded.backbone, policy.backbone);
        // Same seed, same observation: identical samples through the load.
        let obs: Vec<Real> = (0..8).map(|i| i as Real * 0.05).collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(policy.sample_chunk(&obs, &mut r1), loaded.sample_chunk(&obs, &mut r2));
    }
}
