use crate::envs::{env_reset, env_step, observe, sample_domain, EnvSpec, RandomizationConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::policy::{policy_distribution, sample_action, ActorParams};
use crate::rng::Rng;

use super::metrics::mean_stderr;

/// Returns of `episodes` episodes, each on a fresh domain drawn at
/// `epsilon_te`. Actions are the distribution mean unless `stochastic`.
pub fn evaluate_episodes(
    actor: &ActorParams,
    spec: &EnvSpec,
    epsilon_te: f64,
    episodes: usize,
    stochastic: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::config("eval_episodes", "must be at least 1"));
    }
    let cfg = RandomizationConfig::new(spec.task, epsilon_te);
    cfg.validate()?;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let domain = sample_domain(&cfg, rng)?;
        let mut state = env_reset(spec, &domain, rng);
        let mut total = 0.0;
        for _ in 0..spec.max_episode_steps {
            let obs = observe(spec, &state);
            let action = if stochastic {
                let dist = policy_distribution(actor, &obs)?;
                sample_action(&dist, rng)
            } else {
                actor.means(&Tensor::new(vec![1, obs.len()], obs)?)?.into_data()
            };
            let out = env_step(spec, &domain, &state, &action)?;
            total += out.reward;
            if out.done {
                break;
            }
            state = out.state;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Deterministic evaluation: `(mean return, stderr)` over `episodes`
/// episodes at `epsilon_te`. Never modifies `actor`.
pub fn evaluate_policy(actor: &ActorParams, spec: &EnvSpec, epsilon_te: f64, episodes: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    let returns = evaluate_episodes(actor, spec, epsilon_te, episodes, false, rng)?;
    Ok(mean_stderr(&returns))
}
