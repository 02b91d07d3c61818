use rayon::prelude::*;

use super::{chunks, grad_variance_log, permutation, prepare_batch, Hyperparams, IterationMetrics, LossAccum, Trajectory, WorkerMetrics, WorkerState};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::policy::ActorParams;

fn split_peers(workers: &mut [WorkerState], i: usize) -> (&mut WorkerState, Vec<&ActorParams>) {
    let (left, rest) = workers.split_at_mut(i);
    let (me, right) = rest.split_first_mut().expect("index in range");
    let peers = left.iter().chain(right.iter()).map(|w| &w.learner.actor).collect();
    (me, peers)
}

/// Collect one prepared batch per worker (in parallel; each worker owns its
/// streams).
pub(crate) fn collect_all(workers: &mut [WorkerState], spec: &EnvSpec, hp: &Hyperparams) -> Result<Vec<Trajectory>> {
    workers
        .par_iter_mut()
        .map(|w| {
            let l = &w.learner;
            prepare_batch(&mut w.sampler, &l.actor, &l.critic, spec, hp, hp.normalize_advantages)
        })
        .collect()
}

/// One iteration of online peer-to-peer distillation with PPO.
///
/// Every worker samples a domain and collects `T` steps; then, for each epoch
/// and each minibatch round, workers `0..K` update sequentially: an actor
/// step on `L_PPO + alpha * L_dis` against the peers' current parameters,
/// followed by a critic MSE step.
pub fn p2pdrl_iteration(workers: &mut [WorkerState], spec: &EnvSpec, hp: &Hyperparams) -> Result<IterationMetrics> {
    hp.validate()?;
    if workers.len() != hp.workers {
        return Err(Error::State(format!(
            "{} worker states for a {}-worker configuration",
            workers.len(),
            hp.workers
        )));
    }
    let k = workers.len();
    let trajs = collect_all(workers, spec, hp)?;

    let mut gv = Vec::with_capacity(k);
    for i in 0..k {
        let (me, peers) = split_peers(workers, i);
        gv.push(grad_variance_log(&me.learner.actor, &trajs[i], &peers, hp)?);
    }

    let mut acc = vec![LossAccum::default(); k];
    for _epoch in 0..hp.epochs {
        let perms: Vec<Vec<usize>> = workers
            .iter_mut()
            .zip(&trajs)
            .map(|(w, t)| permutation(t.len(), &mut w.learner.shuffle_rng))
            .collect();
        let snapshot: Option<Vec<ActorParams>> = hp
            .snapshot_per_epoch
            .then(|| workers.iter().map(|w| w.learner.actor.clone()).collect());
        let rounds = hp.steps_per_worker.div_ceil(hp.minibatch_size);
        for j in 0..rounds {
            for i in 0..k {
                let Some(range) = chunks(trajs[i].len(), hp.minibatch_size).nth(j) else {
                    continue;
                };
                let mb = trajs[i].minibatch(&perms[i][range])?;
                let (me, live_peers) = split_peers(workers, i);
                let peers: Vec<&ActorParams> = match &snapshot {
                    Some(s) => s.iter().enumerate().filter(|(p, _)| *p != i).map(|(_, a)| a).collect(),
                    None => live_peers,
                };
                let (ppo, dis) = me.learner.regularized_actor_step(&mb, &peers, hp)?;
                let v = me.learner.critic_step(&mb, hp)?;
                acc[i].add(ppo, dis, v);
            }
        }
    }

    let metrics = (0..k)
        .map(|i| {
            let (ppo_loss, distill_loss, value_loss) = acc[i].means();
            WorkerMetrics {
                worker_id: workers[i].id,
                mean_episode_return: trajs[i].mean_episode_return(),
                ppo_loss,
                distill_loss,
                value_loss,
                grad_variance_log: gv[i],
            }
        })
        .collect();
    Ok(IterationMetrics {
        env_steps: trajs.iter().map(Trajectory::len).sum(),
        workers: metrics,
    })
}
