use rayon::prelude::*;

use super::p2pdrl::collect_all;
use super::{chunks, clip_grad_norm, critic_objective, grad_variance_log, regularized_actor_grad, permutation, finish_batch, gather_batch, reward_scale, Hyperparams, IterationMetrics, Learner, LossAccum, Sampler, Trajectory, WorkerMetrics, WorkerState};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, ParamSet, RunningMoments};
use crate::policy::{ActorParams, CriticParams};
use crate::rng::Rng;

use super::losses::kl_from_sources;

/// A single learner fed by `K` independent data slots (vanilla PPO and
/// distributed PPO).
#[derive(Debug, Clone)]
pub struct PooledAgent {
    pub learner: Learner,
    pub samplers: Vec<Sampler>,
}

/// Global policy used by Distral and DnC.
#[derive(Debug, Clone)]
pub struct GlobalPolicy {
    pub actor: ActorParams,
    pub opt: AdamState,
    pub shuffle_rng: Rng,
}

impl GlobalPolicy {
    pub fn new(actor: ActorParams, shuffle_rng: Rng) -> Self {
        Self {
            opt: AdamState::new(&actor),
            actor,
            shuffle_rng,
        }
    }
}

fn collect_slots(agent: &mut PooledAgent, spec: &EnvSpec, hp: &Hyperparams, normalize: bool) -> Result<Vec<Trajectory>> {
    let (actor, critic) = (&agent.learner.actor, &agent.learner.critic);
    let mut parts: Vec<Trajectory> = agent
        .samplers
        .par_iter_mut()
        .map(|s| gather_batch(s, actor, critic, spec, hp))
        .collect::<Result<_>>()?;
    // One critic serves every slot, so all slots share one reward scale.
    let scale = if !hp.normalize_rewards {
        1.0
    } else if let [only] = agent.samplers.as_slice() {
        reward_scale(&only.return_moments)
    } else {
        let mut total = RunningMoments::new(1);
        for s in &agent.samplers {
            total.merge(&s.return_moments);
        }
        reward_scale(&total)
    };
    for t in &mut parts {
        finish_batch(t, hp, scale, normalize)?;
    }
    Ok(parts)
}

fn check_slots(n: usize, hp: &Hyperparams) -> Result<()> {
    if n != hp.workers {
        return Err(Error::State(format!("{n} data slots for a {}-worker configuration", hp.workers)));
    }
    Ok(())
}

/// Standard PPO on the union of the `K` slots' data: `K` domains, `T` steps
/// each, one pooled batch of `K * T` rows.
pub fn vanilla_ppo_iteration(agent: &mut PooledAgent, spec: &EnvSpec, hp: &Hyperparams) -> Result<IterationMetrics> {
    hp.validate()?;
    check_slots(agent.samplers.len(), hp)?;
    let parts = collect_slots(agent, spec, hp, false)?;
    let mut pooled = Trajectory::concat(&parts)?;
    if hp.normalize_advantages {
        pooled.normalize_advantages()?;
    }
    let gv = grad_variance_log(&agent.learner.actor, &pooled, &[], hp)?;

    let mut acc = LossAccum::default();
    for _ in 0..hp.epochs {
        let perm = permutation(pooled.len(), &mut agent.learner.shuffle_rng);
        for range in chunks(pooled.len(), hp.minibatch_size) {
            let mb = pooled.minibatch(&perm[range])?;
            let (ppo, _) = agent.learner.regularized_actor_step(&mb, &[], hp)?;
            let v = agent.learner.critic_step(&mb, hp)?;
            acc.add(ppo, 0.0, v);
        }
    }
    let (ppo_loss, distill_loss, value_loss) = acc.means();
    Ok(IterationMetrics {
        env_steps: pooled.len(),
        workers: vec![WorkerMetrics {
            worker_id: 0,
            mean_episode_return: pooled.mean_episode_return(),
            ppo_loss,
            distill_loss,
            value_loss,
            grad_variance_log: gv,
        }],
    })
}

/// Distributed PPO: each slot computes PPO and value gradients on its own
/// minibatch against the shared parameters; the learner steps on the mean.
pub fn distributed_ppo_iteration(agent: &mut PooledAgent, spec: &EnvSpec, hp: &Hyperparams) -> Result<IterationMetrics> {
    hp.validate()?;
    check_slots(agent.samplers.len(), hp)?;
    let parts = collect_slots(agent, spec, hp, hp.normalize_advantages)?;
    let pooled = Trajectory::concat(&parts)?;
    let gv = grad_variance_log(&agent.learner.actor, &pooled, &[], hp)?;
    let k = parts.len();

    let mut acc = LossAccum::default();
    for _ in 0..hp.epochs {
        let perms: Vec<Vec<usize>> = parts
            .iter()
            .map(|t| permutation(t.len(), &mut agent.learner.shuffle_rng))
            .collect();
        let rounds = hp.steps_per_worker.div_ceil(hp.minibatch_size);
        for j in 0..rounds {
            let mut actor_grad: Option<ActorParams> = None;
            let mut critic_grad: Option<CriticParams> = None;
            let (mut ppo_sum, mut v_sum) = (0.0, 0.0);
            for (t, perm) in parts.iter().zip(&perms) {
                let range = chunks(t.len(), hp.minibatch_size).nth(j).expect("equal slot lengths");
                let mb = t.minibatch(&perm[range])?;
                let (ppo, _, pg) = regularized_actor_grad(&agent.learner.actor, &mb, &[], hp)?;
                let v = critic_objective(&agent.learner.critic, &mb, hp)?;
                ppo_sum += ppo;
                v_sum += v.loss;
                match actor_grad.as_mut() {
                    Some(g) => g.add_scaled(&pg, 1.0),
                    None => actor_grad = Some(pg),
                }
                match critic_grad.as_mut() {
                    Some(g) => g.add_scaled(&v.grad, 1.0),
                    None => critic_grad = Some(v.grad),
                }
            }
            let (mut ga, mut gc) = (actor_grad.expect("k >= 1"), critic_grad.expect("k >= 1"));
            if k > 1 {
                ga.scale(1.0 / k as f64);
                gc.scale(1.0 / k as f64);
            }
            let l = &mut agent.learner;
            l.apply_actor_grad(ga, hp)?;
            l.apply_critic_grad(gc, hp)?;
            acc.add(ppo_sum / k as f64, 0.0, v_sum / k as f64);
        }
    }
    let (ppo_loss, distill_loss, value_loss) = acc.means();
    Ok(IterationMetrics {
        env_steps: pooled.len(),
        workers: vec![WorkerMetrics {
            worker_id: 0,
            mean_episode_return: pooled.mean_episode_return(),
            ppo_loss,
            distill_loss,
            value_loss,
            grad_variance_log: gv,
        }],
    })
}

/// Local PPO phase shared by Distral and DnC: each worker steps on
/// `L_PPO + alpha * KL(pi_i || pi_global)`; with `global_step`, the global
/// policy then takes one supervised step on `sum_i KL(pi_i || pi_global)`
/// over the round's minibatch states, with locals frozen.
fn local_phase_with_global(
    workers: &mut [WorkerState],
    global: &mut GlobalPolicy,
    trajs: &[Trajectory],
    hp: &Hyperparams,
    global_step: bool,
) -> Result<Vec<LossAccum>> {
    let k = workers.len();
    let mut acc = vec![LossAccum::default(); k];
    for _ in 0..hp.epochs {
        let perms: Vec<Vec<usize>> = workers
            .iter_mut()
            .zip(trajs)
            .map(|(w, t)| permutation(t.len(), &mut w.learner.shuffle_rng))
            .collect();
        let rounds = hp.steps_per_worker.div_ceil(hp.minibatch_size);
        for j in 0..rounds {
            let mut batches = Vec::with_capacity(k);
            for i in 0..k {
                let range = chunks(trajs[i].len(), hp.minibatch_size).nth(j).expect("equal worker lengths");
                let mb = trajs[i].minibatch(&perms[i][range])?;
                let w = &mut workers[i];
                let (ppo, dis) = w.learner.regularized_actor_step(&mb, &[&global.actor], hp)?;
                let v = w.learner.critic_step(&mb, hp)?;
                acc[i].add(ppo, dis, v);
                batches.push(mb);
            }
            if global_step {
                let sources: Vec<(&ActorParams, &crate::numerics::Tensor)> = workers
                    .iter()
                    .zip(&batches)
                    .map(|(w, mb)| (&w.learner.actor, &mb.states))
                    .collect();
                let g = kl_from_sources(&global.actor, &sources)?;
                let mut grad = g.grad;
                clip_grad_norm(&mut grad, hp.max_grad_norm);
                global.opt.step(&mut global.actor, &grad, hp.lr)?;
            }
        }
    }
    Ok(acc)
}

fn with_global_metrics(workers: &[WorkerState], trajs: &[Trajectory], acc: &[LossAccum], gv: Vec<f64>) -> IterationMetrics {
    let metrics = workers
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (ppo_loss, distill_loss, value_loss) = acc[i].means();
            WorkerMetrics {
                worker_id: w.id,
                mean_episode_return: trajs[i].mean_episode_return(),
                ppo_loss,
                distill_loss,
                value_loss,
                grad_variance_log: gv[i],
            }
        })
        .collect();
    IterationMetrics {
        env_steps: trajs.iter().map(Trajectory::len).sum(),
        workers: metrics,
    }
}

fn global_grad_variance(workers: &[WorkerState], global: &GlobalPolicy, trajs: &[Trajectory], hp: &Hyperparams) -> Result<Vec<f64>> {
    workers
        .iter()
        .zip(trajs)
        .map(|(w, t)| grad_variance_log(&w.learner.actor, t, &[&global.actor], hp))
        .collect()
}

/// Distral: locals regularized toward a global policy that is distilled from
/// them with one supervised step per minibatch round.
pub fn distral_iteration(workers: &mut [WorkerState], global: &mut GlobalPolicy, spec: &EnvSpec, hp: &Hyperparams) -> Result<IterationMetrics> {
    hp.validate()?;
    check_slots(workers.len(), hp)?;
    let trajs = collect_all(workers, spec, hp)?;
    let gv = global_grad_variance(workers, global, &trajs, hp)?;
    let acc = local_phase_with_global(workers, global, &trajs, hp, true)?;
    Ok(with_global_metrics(workers, &trajs, &acc, gv))
}

/// DnC: locals regularized toward the global policy; every `dnc_period`
/// iterations (counted from `iteration = 0`) the global policy is distilled
/// on the pooled states of all workers and every local actor is reset to it.
pub fn dnc_iteration(
    workers: &mut [WorkerState],
    global: &mut GlobalPolicy,
    spec: &EnvSpec,
    hp: &Hyperparams,
    iteration: usize,
) -> Result<IterationMetrics> {
    hp.validate()?;
    check_slots(workers.len(), hp)?;
    let trajs = collect_all(workers, spec, hp)?;
    let gv = global_grad_variance(workers, global, &trajs, hp)?;
    let acc = local_phase_with_global(workers, global, &trajs, hp, false)?;

    if let Some(period) = hp.dnc_period {
        if (iteration + 1) % period == 0 {
            distill_global(workers, global, &trajs, hp)?;
            for w in workers.iter_mut() {
                w.learner.actor = global.actor.clone();
                w.learner.actor_opt = AdamState::new(&w.learner.actor);
            }
        }
    }
    Ok(with_global_metrics(workers, &trajs, &acc, gv))
}

fn distill_global(workers: &[WorkerState], global: &mut GlobalPolicy, trajs: &[Trajectory], hp: &Hyperparams) -> Result<()> {
    let pooled: Vec<f64> = trajs.iter().flat_map(|t| t.states.iter().copied()).collect();
    let obs_dim = trajs[0].obs_dim;
    let n = pooled.len() / obs_dim;
    for _ in 0..hp.epochs {
        let perm = permutation(n, &mut global.shuffle_rng);
        for range in chunks(n, hp.minibatch_size) {
            let mut rows = Vec::with_capacity(range.len() * obs_dim);
            for &r in &perm[range] {
                rows.extend_from_slice(&pooled[r * obs_dim..(r + 1) * obs_dim]);
            }
            let states = crate::numerics::Tensor::new(vec![rows.len() / obs_dim, obs_dim], rows)?;
            let sources: Vec<(&ActorParams, &crate::numerics::Tensor)> =
                workers.iter().map(|w| (&w.learner.actor, &states)).collect();
            let g = kl_from_sources(&global.actor, &sources)?;
            let mut grad = g.grad;
                clip_grad_norm(&mut grad, hp.max_grad_norm);
                global.opt.step(&mut global.actor, &grad, hp.lr)?;
        }
    }
    Ok(())
}
