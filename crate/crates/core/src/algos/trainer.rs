use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    distral_iteration, distributed_ppo_iteration, dnc_iteration, initial_params, p2pdrl_iteration, vanilla_ppo_iteration,
    GlobalPolicy, Hyperparams, IterationMetrics, Learner, PooledAgent, Sampler, WorkerState,
};
use crate::envs::{EnvSpec, PartitionScheme, RandomizationConfig};
use crate::error::{Error, Result};
use crate::numerics::RunningMoments;
use crate::policy::{ActorParams, ObsNorm};
use crate::rng::{shared_stream, worker_stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    P2pdrl,
    Ppo,
    Dppo,
    Distral,
    Dnc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::P2pdrl,
        Algorithm::Ppo,
        Algorithm::Dppo,
        Algorithm::Distral,
        Algorithm::Dnc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::P2pdrl => "p2pdrl",
            Algorithm::Ppo => "ppo",
            Algorithm::Dppo => "dppo",
            Algorithm::Distral => "distral",
            Algorithm::Dnc => "dnc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm {s:?} (expected p2pdrl, ppo, dppo, distral or dnc)")))
    }
}

#[derive(Debug, Clone)]
enum State {
    Workers(Vec<WorkerState>),
    Pooled(PooledAgent),
    WithGlobal(Vec<WorkerState>, GlobalPolicy),
}

/// Any of the five algorithms, advanced one iteration at a time.
///
/// All learners start from the same `(theta_0, phi_0)` drawn from the run
/// seed; worker (or slot) `i` draws domains, resets, actions and minibatch
/// shuffles from its own streams, so worker 0 of every algorithm sees the
/// same random numbers.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub algorithm: Algorithm,
    pub spec: EnvSpec,
    pub hp: Hyperparams,
    pub seed: u64,
    iteration: usize,
    env_steps: usize,
    state: State,
}

impl Trainer {
    pub fn new(
        algorithm: Algorithm,
        spec: EnvSpec,
        hp: Hyperparams,
        rand_cfg: RandomizationConfig,
        partition: PartitionScheme,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        rand_cfg.validate()?;
        let (actor0, critic0) = initial_params(seed, &spec);
        let cfg_for = |i: usize| rand_cfg.with_partition(partition.for_worker(i));
        let workers = || -> Vec<WorkerState> {
            (0..hp.workers)
                .map(|i| WorkerState::new(i, seed, actor0.clone(), critic0.clone(), cfg_for(i)))
                .collect()
        };
        let state = match algorithm {
            Algorithm::P2pdrl => State::Workers(workers()),
            Algorithm::Ppo | Algorithm::Dppo => State::Pooled(PooledAgent {
                learner: Learner::new(actor0.clone(), critic0.clone(), worker_stream(seed, 0, Stream::Shuffle)),
                samplers: (0..hp.workers).map(|i| Sampler::new(seed, i, cfg_for(i))).collect(),
            }),
            Algorithm::Distral | Algorithm::Dnc => State::WithGlobal(
                workers(),
                GlobalPolicy::new(actor0.clone(), shared_stream(seed, Stream::Shuffle)),
            ),
        };
        let mut trainer = Self {
            algorithm,
            spec,
            hp,
            seed,
            iteration: 0,
            env_steps: 0,
            state,
        };
        if trainer.hp.normalize_observations {
            let dim = trainer.spec.state_dim;
            for s in trainer.samplers_mut() {
                s.track_observations(dim);
            }
        }
        Ok(trainer)
    }

    fn samplers_mut(&mut self) -> Vec<&mut Sampler> {
        match &mut self.state {
            State::Workers(w) | State::WithGlobal(w, _) => w.iter_mut().map(|w| &mut w.sampler).collect(),
            State::Pooled(a) => a.samplers.iter_mut().collect(),
        }
    }

    /// Install the run-wide observation statistics on every policy and
    /// critic of the run.
    fn refresh_obs_norm(&mut self) {
        let mut total = RunningMoments::new(self.spec.state_dim);
        for s in self.samplers_mut() {
            if let Some(m) = &s.obs_moments {
                total.merge(m);
            }
        }
        let norm = Some(ObsNorm::from_moments(&total));
        let learners: Vec<&mut Learner> = match &mut self.state {
            State::Workers(w) => w.iter_mut().map(|w| &mut w.learner).collect(),
            State::Pooled(a) => vec![&mut a.learner],
            State::WithGlobal(w, g) => {
                g.actor.obs_norm = norm.clone();
                w.iter_mut().map(|w| &mut w.learner).collect()
            }
        };
        for l in learners {
            l.actor.obs_norm = norm.clone();
            l.critic.obs_norm = norm.clone();
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let (spec, hp) = (&self.spec, &self.hp);
        let m = match (&mut self.state, self.algorithm) {
            (State::Workers(w), _) => p2pdrl_iteration(w, spec, hp)?,
            (State::Pooled(a), Algorithm::Ppo) => vanilla_ppo_iteration(a, spec, hp)?,
            (State::Pooled(a), _) => distributed_ppo_iteration(a, spec, hp)?,
            (State::WithGlobal(w, g), Algorithm::Distral) => distral_iteration(w, g, spec, hp)?,
            (State::WithGlobal(w, g), _) => dnc_iteration(w, g, spec, hp, self.iteration)?,
        };
        self.iteration += 1;
        self.env_steps += m.env_steps;
        if self.hp.normalize_observations {
            self.refresh_obs_norm();
        }
        Ok(m)
    }

    /// The policy reported as the algorithm's result: worker 0 for P2PDRL,
    /// the single learner for (distributed) PPO, the global policy for
    /// Distral and DnC.
    pub fn headline_actor(&self) -> &ActorParams {
        match &self.state {
            State::Workers(w) => &w[0].learner.actor,
            State::Pooled(a) => &a.learner.actor,
            State::WithGlobal(_, g) => &g.actor,
        }
    }

    /// Every per-worker actor (a single entry for the pooled baselines).
    pub fn worker_actors(&self) -> Vec<&ActorParams> {
        match &self.state {
            State::Workers(w) | State::WithGlobal(w, _) => w.iter().map(|w| &w.learner.actor).collect(),
            State::Pooled(a) => vec![&a.learner.actor],
        }
    }

    pub fn global_actor(&self) -> Option<&ActorParams> {
        match &self.state {
            State::WithGlobal(_, g) => Some(&g.actor),
            _ => None,
        }
    }

    pub fn workers(&self) -> Option<&[WorkerState]> {
        match &self.state {
            State::Workers(w) | State::WithGlobal(w, _) => Some(w),
            State::Pooled(_) => None,
        }
    }

    pub fn pooled(&self) -> Option<&PooledAgent> {
        match &self.state {
            State::Pooled(a) => Some(a),
            _ => None,
        }
    }
}
