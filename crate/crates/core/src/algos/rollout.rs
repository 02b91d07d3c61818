use rand::Rng as _;

use crate::envs::{env_reset, env_step, observe, sample_domain, DomainParams, EnvSpec, EnvState, RandomizationConfig};
use crate::error::{Error, Result};
use crate::numerics::{RunningMoments, Tensor};
use crate::policy::{log_prob_parts, sample_action, ActorParams, CriticParams, GaussianDist};
use crate::rng::{worker_stream, Rng, Stream};

/// Domain sampler plus the random streams that drive data collection for
/// one worker (or one data slot of a pooled learner).
#[derive(Debug, Clone)]
pub struct Sampler {
    pub rand_cfg: RandomizationConfig,
    pub domain: DomainParams,
    pub domain_rng: Rng,
    pub env_rng: Rng,
    pub action_rng: Rng,
    /// Statistics of every observation collected so far, when tracked.
    pub obs_moments: Option<RunningMoments>,
    /// Statistics of the discounted returns seen by this slot, used for
    /// reward scaling.
    pub return_moments: RunningMoments,
}

impl Sampler {
    pub fn new(seed: u64, slot: usize, rand_cfg: RandomizationConfig) -> Self {
        Self {
            domain: rand_cfg.base,
            rand_cfg,
            domain_rng: worker_stream(seed, slot, Stream::Domain),
            env_rng: worker_stream(seed, slot, Stream::Env),
            action_rng: worker_stream(seed, slot, Stream::Action),
            obs_moments: None,
            return_moments: RunningMoments::new(1),
        }
    }

    /// Start accumulating observation statistics of `dim`-wide observations.
    pub fn track_observations(&mut self, dim: usize) {
        self.obs_moments = Some(RunningMoments::new(dim));
    }

    /// Draw this slot's domain for the coming rollout.
    pub fn sample_domain(&mut self) -> Result<DomainParams> {
        self.domain = sample_domain(&self.rand_cfg, &mut self.domain_rng)?;
        Ok(self.domain)
    }

    /// Collect exactly `steps` transitions in the current domain. Episodes end
    /// on termination or at the task's step limit and restart automatically;
    /// both count as `done`.
    pub fn collect(&mut self, actor: &ActorParams, critic: &CriticParams, spec: &EnvSpec, steps: usize) -> Result<Trajectory> {
        if steps == 0 {
            return Err(Error::config("steps_per_worker", "rollout length must be at least 1"));
        }
        let obs_dim = spec.state_dim;
        let act_dim = spec.action_dim;
        let std = actor.std();
        let log_std = actor.clamped_log_std();

        let mut traj = Trajectory::with_capacity(steps, obs_dim, act_dim);
        let mut env_state = env_reset(spec, &self.domain, &mut self.env_rng);
        let mut ep_return = 0.0;
        let mut ep_len = 0usize;
        for _ in 0..steps {
            let obs = observe(spec, &env_state);
            let x = Tensor::new(vec![1, obs_dim], obs.clone())?;
            let mean = actor.means(&x)?.into_data();
            let v = critic.values(&x)?[0];
            let dist = GaussianDist {
                mean: Tensor::vector(mean.clone()),
                std: Tensor::vector(std.clone()),
            };
            let action = sample_action(&dist, &mut self.action_rng);
            let logp = log_prob_parts(&mean, &std, &log_std, &action);
            let out = env_step(spec, &self.domain, &env_state, &action)?;
            ep_return += out.reward;
            ep_len += 1;
            let done = out.done || ep_len >= spec.max_episode_steps;

            traj.states.extend_from_slice(&obs);
            traj.actions.extend_from_slice(&action);
            traj.env_states.push(env_state);
            traj.domains.push(self.domain);
            traj.rewards.push(out.reward);
            traj.dones.push(done);
            traj.values.push(v);
            traj.log_probs.push(logp);

            if done {
                traj.episode_returns.push(ep_return);
                ep_return = 0.0;
                ep_len = 0;
                if self.rand_cfg.resample_per_episode {
                    self.sample_domain()?;
                }
                env_state = env_reset(spec, &self.domain, &mut self.env_rng);
            } else {
                env_state = out.state;
            }
        }
        traj.partial_return = if ep_len > 0 { Some(ep_return) } else { None };
        traj.bootstrap_value = if *traj.dones.last().unwrap() {
            0.0
        } else {
            let x = Tensor::new(vec![1, obs_dim], observe(spec, &env_state))?;
            critic.values(&x)?[0]
        };
        traj.obs_dim = obs_dim;
        traj.act_dim = act_dim;
        if let Some(m) = self.obs_moments.as_mut() {
            m.update(&traj.states);
        }
        Ok(traj)
    }
}

/// One worker's rollout. Per-step arrays all have length `len()`;
/// `advantages`/`targets` are filled by [`compute_gae`].
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Row-major `len x obs_dim` observations.
    pub states: Vec<f64>,
    /// Row-major `len x act_dim` unclipped actions.
    pub actions: Vec<f64>,
    pub env_states: Vec<EnvState>,
    pub domains: Vec<DomainParams>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
    /// `V(s_T)` if the last step is non-terminal, else 0.
    pub bootstrap_value: f64,
    pub episode_returns: Vec<f64>,
    pub partial_return: Option<f64>,
}

impl Trajectory {
    fn with_capacity(steps: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            states: Vec::with_capacity(steps * obs_dim),
            actions: Vec::with_capacity(steps * act_dim),
            env_states: Vec::with_capacity(steps),
            domains: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            dones: Vec::with_capacity(steps),
            values: Vec::with_capacity(steps),
            log_probs: Vec::with_capacity(steps),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Mean return over completed episodes, or the running return of the
    /// unfinished episode when none completed.
    pub fn mean_episode_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            self.partial_return.unwrap_or(0.0)
        } else {
            self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
        }
    }

    pub fn state_row(&self, t: usize) -> &[f64] {
        &self.states[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action_row(&self, t: usize) -> &[f64] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    /// Normalize advantages to zero mean and unit (population) std.
    pub fn normalize_advantages(&mut self) -> Result<()> {
        let adv = self
            .advantages
            .as_mut()
            .ok_or_else(|| Error::State("advantages not computed".into()))?;
        normalize(adv);
        Ok(())
    }

    /// Concatenate trajectories whose advantages are already computed.
    pub fn concat(parts: &[Trajectory]) -> Result<Trajectory> {
        let first = parts.first().ok_or_else(|| Error::State("nothing to concatenate".into()))?;
        let mut out = Trajectory {
            obs_dim: first.obs_dim,
            act_dim: first.act_dim,
            advantages: Some(Vec::new()),
            targets: Some(Vec::new()),
            ..Default::default()
        };
        for p in parts {
            let (adv, tgt) = match (&p.advantages, &p.targets) {
                (Some(a), Some(t)) => (a, t),
                _ => return Err(Error::State("advantages not computed".into())),
            };
            out.states.extend_from_slice(&p.states);
            out.actions.extend_from_slice(&p.actions);
            out.env_states.extend(p.env_states.iter().cloned());
            out.domains.extend_from_slice(&p.domains);
            out.rewards.extend_from_slice(&p.rewards);
            out.dones.extend_from_slice(&p.dones);
            out.values.extend_from_slice(&p.values);
            out.log_probs.extend_from_slice(&p.log_probs);
            out.advantages.as_mut().unwrap().extend_from_slice(adv);
            out.targets.as_mut().unwrap().extend_from_slice(tgt);
            out.episode_returns.extend_from_slice(&p.episode_returns);
        }
        if out.episode_returns.is_empty() {
            let partial: Vec<f64> = parts.iter().filter_map(|p| p.partial_return).collect();
            if !partial.is_empty() {
                out.partial_return = Some(partial.iter().sum::<f64>() / partial.len() as f64);
            }
        }
        Ok(out)
    }

    /// Gather the rows in `idx` as a training minibatch.
    pub fn minibatch(&self, idx: &[usize]) -> Result<Minibatch> {
        let (adv, tgt) = match (&self.advantages, &self.targets) {
            (Some(a), Some(t)) => (a, t),
            _ => return Err(Error::State("advantages not computed".into())),
        };
        let mut states = Vec::with_capacity(idx.len() * self.obs_dim);
        let mut actions = Vec::with_capacity(idx.len() * self.act_dim);
        for &i in idx {
            states.extend_from_slice(self.state_row(i));
            actions.extend_from_slice(self.action_row(i));
        }
        Ok(Minibatch {
            states: Tensor::new(vec![idx.len(), self.obs_dim], states)?,
            actions: Tensor::new(vec![idx.len(), self.act_dim], actions)?,
            old_log_probs: idx.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| adv[i]).collect(),
            targets: idx.iter().map(|&i| tgt[i]).collect(),
            old_values: idx.iter().map(|&i| self.values[i]).collect(),
        })
    }

    pub fn states_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.obs_dim], self.states.clone()).expect("sized")
    }
}

pub(crate) fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// Training rows drawn from a trajectory.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    /// Critic estimates recorded at collection time.
    pub old_values: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }
}

/// Generalized advantage estimation. Fills `advantages` and value targets
/// `V_targ = A + V`.
pub fn compute_gae(traj: &mut Trajectory, gamma: f64, lambda: f64, bootstrap_value: f64) {
    compute_gae_scaled(traj, gamma, lambda, bootstrap_value, 1.0);
}

/// [`compute_gae`] on rewards multiplied by `reward_scale`; values are taken
/// to be in the scaled units already.
pub fn compute_gae_scaled(traj: &mut Trajectory, gamma: f64, lambda: f64, bootstrap_value: f64, reward_scale: f64) {
    let n = traj.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if traj.dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { traj.values[t + 1] } else { bootstrap_value };
        let delta = traj.rewards[t] * reward_scale + gamma * next_value * not_done - traj.values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        adv[t] = next_adv;
    }
    let targets = adv.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    traj.advantages = Some(adv);
    traj.targets = Some(targets);
}

/// Running discounted return `R_t = r_t + gamma R_{t-1}`, restarted after
/// every episode end.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut acc = 0.0;
    rewards
        .iter()
        .zip(dones)
        .map(|(r, &done)| {
            acc = r + gamma * acc;
            let out = acc;
            if done {
                acc = 0.0;
            }
            out
        })
        .collect()
}

/// Reward multiplier `1 / std(R)` from running discounted-return
/// statistics; 1 before any data.
pub fn reward_scale(returns: &RunningMoments) -> f64 {
    if returns.count == 0.0 {
        return 1.0;
    }
    1.0 / (returns.variance()[0] + 1e-8).sqrt()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[f64], values: &[f64], dones: &[bool]) -> Trajectory {
        Trajectory {
            rewards: rewards.to_vec(),
            values: values.to_vec(),
            dones: dones.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn single_terminal_step() {
        let mut t = traj(&[2.5], &[0.75], &[true]);
        compute_gae(&mut t, 0.99, 0.95, 123.0);
        assert_eq!(t.advantages.as_ref().unwrap()[0], 2.5 - 0.75);
        assert_eq!(t.targets.as_ref().unwrap()[0], 2.5);
    }

    #[test]
    fn telescoping_with_unit_gamma_lambda() {
        let (r, v, boot) = ([0.3, -1.1], [0.2, 0.9], 0.4);
        let mut t = traj(&r, &v, &[false, false]);
        compute_gae(&mut t, 1.0, 1.0, boot);
        let d0 = r[0] + v[1] - v[0];
        let d1 = r[1] + boot - v[1];
        assert!((t.advantages.as_ref().unwrap()[0] - (d0 + d1)).abs() < 1e-15);
    }

    #[test]
    fn hand_recursion() {
        let mut t = traj(&[1.0, 1.0], &[0.5, 0.5], &[false, false]);
        compute_gae(&mut t, 0.99, 0.95, 0.5);
        let a = t.advantages.unwrap();
        let a1 = 1.0 + 0.99 * 0.5 - 0.5;
        let a0 = (1.0 + 0.99 * 0.5 - 0.5) + 0.99 * 0.95 * a1;
        assert!((a[1] - 0.995).abs() < 1e-12 && (a[1] - a1).abs() < 1e-15);
        assert!((a[0] - a0).abs() < 1e-12);
        assert!((a[0] - 1.930_797_5).abs() < 1e-6);
    }

    #[test]
    fn done_cuts_the_recursion() {
        let mut t = traj(&[1.0, 1.0], &[0.0, 0.0], &[true, false]);
        compute_gae(&mut t, 0.9, 0.9, 10.0);
        let a = t.advantages.unwrap();
        assert_eq!(a[0], 1.0);
        assert_eq!(a[1], 1.0 + 0.9 * 10.0);
    }

    #[test]
    fn normalization_zero_mean_unit_std() {
        let mut xs = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = crate::rng::stream(1, &[1]);
        let mut p = permutation(100, &mut r);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
