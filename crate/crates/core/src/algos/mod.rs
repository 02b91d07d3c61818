//! Rollouts, advantage estimation, the three losses, and the multi-worker
//! trainers: peer-to-peer distillation plus PPO, distributed PPO, Distral and
//! DnC baselines.

mod baselines;
mod losses;
mod p2pdrl;
mod rollout;
mod trainer;

pub use baselines::{distral_iteration, distributed_ppo_iteration, dnc_iteration, vanilla_ppo_iteration, GlobalPolicy, PooledAgent};
pub use losses::{clipped_value_loss, distill_loss, entropy_grad, kl_from_sources, kl_to_targets, ppo_loss, value_loss, LossGrad};
pub use p2pdrl::p2pdrl_iteration;
pub use rollout::{compute_gae, compute_gae_scaled, discounted_returns, permutation, reward_scale, Minibatch, Sampler, Trajectory};
pub use trainer::{Algorithm, Trainer};

use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, RandomizationConfig};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, ParamSet};
use crate::policy::{ActorParams, CriticParams};
use crate::rng::{shared_stream, worker_stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Distillation / regularization coefficient.
    pub alpha: f64,
    pub lr: f64,
    /// Number of workers (data slots for the pooled baselines).
    pub workers: usize,
    /// Environment steps collected per worker per iteration.
    pub steps_per_worker: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
    /// Freeze peer copies at the start of every epoch instead of reading
    /// their live parameters.
    pub snapshot_per_epoch: bool,
    /// DnC distill-and-reset period in iterations; `None` never resets.
    pub dnc_period: Option<usize>,
    /// Entropy bonus coefficient (0 disables).
    pub entropy_coef: f64,
    /// PPO-style clipping range for value updates around the rollout-time
    /// estimates.
    pub value_clip: Option<f64>,
    /// Rescale every actor and critic gradient to at most this global norm.
    pub max_grad_norm: Option<f64>,
    /// Standardize observations with running statistics shared by all
    /// policies of a run, refreshed after every iteration.
    pub normalize_observations: bool,
    /// Divide rewards by the running std of the discounted return before
    /// advantage estimation (the critic learns in those units).
    pub normalize_rewards: bool,
    /// Constant multiplier on rewards before advantage estimation, applied
    /// on top of `normalize_rewards`.
    pub reward_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            alpha: 1.0,
            lr: 1e-3,
            workers: 2,
            steps_per_worker: 2048,
            epochs: 10,
            minibatch_size: 64,
            normalize_advantages: true,
            snapshot_per_epoch: false,
            dnc_period: Some(10),
            entropy_coef: 0.0,
            value_clip: None,
            max_grad_norm: None,
            normalize_observations: false,
            normalize_rewards: true,
            reward_scale: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} is outside (0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        if !(self.clip_eps > 0.0) {
            return Err(Error::config("clip_eps", format!("{} must be positive", self.clip_eps)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("alpha", format!("{} must be a finite value >= 0", self.alpha)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", format!("{} must be a finite value >= 0", self.lr)));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "at least one worker is required"));
        }
        if self.steps_per_worker == 0 {
            return Err(Error::config("steps_per_worker", "must be at least 1"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("minibatch_size", "must be at least 1"));
        }
        if self.dnc_period == Some(0) {
            return Err(Error::config("dnc_period", "reset period must be positive"));
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::config("reward_scale", format!("{} must be a finite value > 0", self.reward_scale)));
        }
        if !(self.entropy_coef >= 0.0) || !self.entropy_coef.is_finite() {
            return Err(Error::config("entropy_coef", format!("{} must be a finite value >= 0", self.entropy_coef)));
        }
        if let Some(c) = self.value_clip {
            if !(c > 0.0) {
                return Err(Error::config("value_clip", format!("{c} must be positive")));
            }
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("max_grad_norm", format!("{c} must be positive")));
            }
        }
        Ok(())
    }

    /// Environment steps consumed by one iteration of any algorithm.
    pub fn steps_per_iteration(&self) -> usize {
        self.workers * self.steps_per_worker
    }
}

/// Parameters and optimizer state owned by one learner.
#[derive(Debug, Clone)]
pub struct Learner {
    pub actor: ActorParams,
    pub critic: CriticParams,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub shuffle_rng: Rng,
}

impl Learner {
    pub fn new(actor: ActorParams, critic: CriticParams, shuffle_rng: Rng) -> Self {
        Self {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
            shuffle_rng,
        }
    }

    /// One actor step on `L_PPO + alpha * mean_k KL(pi || target_k)`.
    /// Returns the two loss values.
    pub fn regularized_actor_step(&mut self, mb: &Minibatch, targets: &[&ActorParams], hp: &Hyperparams) -> Result<(f64, f64)> {
        let (ppo, dis, grad) = regularized_actor_grad(&self.actor, mb, targets, hp)?;
        self.apply_actor_grad(grad, hp)?;
        Ok((ppo, dis))
    }

    pub fn critic_step(&mut self, mb: &Minibatch, hp: &Hyperparams) -> Result<f64> {
        let v = critic_objective(&self.critic, mb, hp)?;
        self.apply_critic_grad(v.grad, hp)?;
        Ok(v.loss)
    }

    pub fn apply_actor_grad(&mut self, mut grad: ActorParams, hp: &Hyperparams) -> Result<()> {
        clip_grad_norm(&mut grad, hp.max_grad_norm);
        self.actor_opt.step(&mut self.actor, &grad, hp.lr)
    }

    pub fn apply_critic_grad(&mut self, mut grad: CriticParams, hp: &Hyperparams) -> Result<()> {
        clip_grad_norm(&mut grad, hp.max_grad_norm);
        self.critic_opt.step(&mut self.critic, &grad, hp.lr)
    }
}

/// Rescale `grad` so its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<P: ParamSet>(grad: &mut P, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.sq_norm().sqrt();
        if norm > max {
            grad.scale(max / norm);
        }
    }
}

/// Critic loss for one minibatch: plain MSE, or the clipped variant when
/// `value_clip` is set.
pub(crate) fn critic_objective(critic: &CriticParams, mb: &Minibatch, hp: &Hyperparams) -> Result<LossGrad<CriticParams>> {
    match hp.value_clip {
        None => value_loss(critic, &mb.states, &mb.targets),
        Some(c) => clipped_value_loss(critic, &mb.states, &mb.targets, &mb.old_values, c),
    }
}

pub(crate) fn regularized_actor_grad(
    actor: &ActorParams,
    mb: &Minibatch,
    targets: &[&ActorParams],
    hp: &Hyperparams,
) -> Result<(f64, f64, ActorParams)> {
    let ppo = ppo_loss(actor, mb, hp.clip_eps)?;
    let mut grad = ppo.grad;
    if hp.entropy_coef != 0.0 {
        grad.add_scaled(&entropy_grad(actor), -hp.entropy_coef);
    }
    let mut dis_loss = 0.0;
    if !targets.is_empty() {
        let dis = kl_to_targets(actor, targets, &mb.states)?;
        dis_loss = dis.loss;
        if hp.alpha != 0.0 {
            grad.add_scaled(&dis.grad, hp.alpha);
        }
    }
    Ok((ppo.loss, dis_loss, grad))
}

/// One actor-critic worker with its own data sampler.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub learner: Learner,
    pub sampler: Sampler,
}

impl WorkerState {
    pub fn new(id: usize, seed: u64, actor: ActorParams, critic: CriticParams, rand_cfg: RandomizationConfig) -> Self {
        Self {
            id,
            learner: Learner::new(actor, critic, worker_stream(seed, id, Stream::Shuffle)),
            sampler: Sampler::new(seed, id, rand_cfg),
        }
    }

    pub fn actor(&self) -> &ActorParams {
        &self.learner.actor
    }

    pub fn critic(&self) -> &CriticParams {
        &self.learner.critic
    }
}

/// Shared initial actor and critic for a run seed.
pub fn initial_params(seed: u64, spec: &EnvSpec) -> (ActorParams, CriticParams) {
    let mut rng = shared_stream(seed, Stream::Init);
    let actor = ActorParams::init_default(spec.state_dim, spec.action_dim, &mut rng);
    let critic = CriticParams::init_default(spec.state_dim, &mut rng);
    (actor, critic)
}

/// Sample a domain, collect `T` steps, and compute (optionally normalized)
/// advantages for one worker.
pub fn collect_rollout(worker: &mut WorkerState, spec: &EnvSpec, steps: usize) -> Result<Trajectory> {
    let l = &worker.learner;
    worker.sampler.collect(&l.actor, &l.critic, spec, steps)
}

/// Sample a domain and collect `T` steps, folding the batch's discounted
/// returns into the slot's statistics when rewards are normalized.
pub(crate) fn gather_batch(sampler: &mut Sampler, actor: &ActorParams, critic: &CriticParams, spec: &EnvSpec, hp: &Hyperparams) -> Result<Trajectory> {
    sampler.sample_domain()?;
    let traj = sampler.collect(actor, critic, spec, hp.steps_per_worker)?;
    if hp.normalize_rewards {
        sampler
            .return_moments
            .update(&discounted_returns(&traj.rewards, &traj.dones, hp.gamma));
    }
    Ok(traj)
}

/// Advantages and targets for a gathered batch, optionally normalized.
pub(crate) fn finish_batch(traj: &mut Trajectory, hp: &Hyperparams, scale: f64, normalize: bool) -> Result<()> {
    let boot = traj.bootstrap_value;
    compute_gae_scaled(traj, hp.gamma, hp.gae_lambda, boot, scale * hp.reward_scale);
    if normalize {
        traj.normalize_advantages()?;
    }
    Ok(())
}

pub(crate) fn prepare_batch(sampler: &mut Sampler, actor: &ActorParams, critic: &CriticParams, spec: &EnvSpec, hp: &Hyperparams, normalize: bool) -> Result<Trajectory> {
    let mut traj = gather_batch(sampler, actor, critic, spec, hp)?;
    let scale = if hp.normalize_rewards { reward_scale(&sampler.return_moments) } else { 1.0 };
    finish_batch(&mut traj, hp, scale, normalize)?;
    Ok(traj)
}

/// Per-worker summary of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerMetrics {
    pub worker_id: usize,
    pub mean_episode_return: f64,
    pub ppo_loss: f64,
    pub distill_loss: f64,
    pub value_loss: f64,
    /// Natural log of the coordinate-averaged variance of the actor gradient
    /// across the minibatches of the iteration's batch (0 when the batch
    /// holds fewer than two minibatches).
    pub grad_variance_log: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub env_steps: usize,
    pub workers: Vec<WorkerMetrics>,
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct LossAccum {
    ppo: f64,
    dis: f64,
    value: f64,
    n: usize,
}

impl LossAccum {
    pub(crate) fn add(&mut self, ppo: f64, dis: f64, value: f64) {
        self.ppo += ppo;
        self.dis += dis;
        self.value += value;
        self.n += 1;
    }

    pub(crate) fn means(&self) -> (f64, f64, f64) {
        if self.n == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = self.n as f64;
        (self.ppo / n, self.dis / n, self.value / n)
    }
}

/// Index ranges of the consecutive minibatches covering `n` rows.
pub(crate) fn chunks(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n.div_ceil(size)).map(move |j| j * size..((j + 1) * size).min(n))
}

/// Log of the mean per-coordinate variance of the actor gradient across the
/// consecutive minibatches of `traj`, evaluated at the current parameters.
pub fn grad_variance_log(actor: &ActorParams, traj: &Trajectory, targets: &[&ActorParams], hp: &Hyperparams) -> Result<f64> {
    let ranges: Vec<_> = chunks(traj.len(), hp.minibatch_size).collect();
    if ranges.len() < 2 {
        return Ok(0.0);
    }
    let mut grads = Vec::with_capacity(ranges.len());
    for r in ranges {
        let idx: Vec<usize> = r.collect();
        let mb = traj.minibatch(&idx)?;
        let (_, _, g) = regularized_actor_grad(actor, &mb, targets, hp)?;
        grads.push(g.flatten());
    }
    let m = grads.len() as f64;
    let dim = grads[0].len();
    let mut total = 0.0;
    for c in 0..dim {
        let mean = grads.iter().map(|g| g[c]).sum::<f64>() / m;
        total += grads.iter().map(|g| (g[c] - mean).powi(2)).sum::<f64>() / m;
    }
    let var = total / dim as f64;
    Ok(if var > 0.0 { var.ln() } else { 0.0 })
}
