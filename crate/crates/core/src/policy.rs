//! Diagonal-Gaussian policy with a state-independent learnable log standard
//! deviation, a scalar state-value critic, and the closed-form distribution
//! math used by the losses.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, ForwardCache, MlpParams, ParamSet, RunningMoments, Tensor, DEFAULT_HIDDEN};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `0.5 * ln(2 pi)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Largest magnitude of a standardized observation.
pub const OBS_CLIP: f64 = 10.0;

/// Fixed input standardization `clip((s - mean) / std)`. Not trained; it is
/// not part of the parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNorm {
    pub mean: Tensor,
    pub std: Tensor,
}

impl ObsNorm {
    pub fn from_moments(m: &RunningMoments) -> Self {
        Self {
            mean: Tensor::vector(m.mean.clone()),
            std: Tensor::vector(m.variance().iter().map(|v| (v + 1e-8).sqrt()).collect()),
        }
    }

    pub fn apply(&self, states: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if states.cols() != d {
            return Err(Error::Shape(format!("observation normalizer is {d}-wide, states have {} columns", states.cols())));
        }
        let (mean, std) = (self.mean.data(), self.std.data());
        let data = states
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().enumerate().map(|(i, x)| ((x - mean[i]) / std[i]).clamp(-OBS_CLIP, OBS_CLIP)))
            .collect();
        Tensor::new(states.shape().to_vec(), data)
    }
}

impl ParamSet for ObsNorm {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("mean".into(), &self.mean), ("std".into(), &self.std)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.mean, &mut self.std]
    }

    fn zeros_like(&self) -> Self {
        Self {
            mean: Tensor::zeros(self.mean.shape()),
            std: Tensor::zeros(self.std.shape()),
        }
    }
}

fn normalized<'a>(norm: &Option<ObsNorm>, states: &'a Tensor) -> Result<std::borrow::Cow<'a, Tensor>> {
    Ok(match norm {
        Some(n) => std::borrow::Cow::Owned(n.apply(states)?),
        None => std::borrow::Cow::Borrowed(states),
    })
}

/// Actor: mean network plus per-dimension learnable log std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorParams {
    pub mean_net: MlpParams,
    pub log_std: Tensor,
    /// Input standardization applied before the mean network, if enabled.
    #[serde(default)]
    pub obs_norm: Option<ObsNorm>,
}

/// Critic: state-value network with a scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub value_net: MlpParams,
    #[serde(default)]
    pub obs_norm: Option<ObsNorm>,
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: Tensor,
    pub std: Tensor,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl ActorParams {
    pub fn init<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            mean_net: MlpParams::init(&layer_sizes(state_dim, hidden, action_dim), rng),
            log_std: Tensor::zeros(&[action_dim]),
            obs_norm: None,
        }
    }

    pub fn init_default<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        Self::init(state_dim, action_dim, &DEFAULT_HIDDEN, rng)
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        Self {
            mean_net: MlpParams::zeros(&layer_sizes(state_dim, hidden, action_dim)),
            log_std: Tensor::zeros(&[action_dim]),
            obs_norm: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Effective log std after clamping to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn clamped_log_std(&self) -> Vec<f64> {
        self.log_std
            .data()
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.clamped_log_std().into_iter().map(f64::exp).collect()
    }

    /// Batch of action means for a `batch x state_dim` matrix, with the cache
    /// needed for [`ActorParams::backward`].
    pub fn forward(&self, states: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let input = normalized(&self.obs_norm, states)?;
        self.mean_net.forward(&input)
    }

    pub fn means(&self, states: &Tensor) -> Result<Tensor> {
        let input = normalized(&self.obs_norm, states)?;
        self.mean_net.predict(&input)
    }

    /// Assemble the actor gradient from upstream gradients w.r.t. the batch
    /// means (`batch x action_dim`) and w.r.t. the effective log std.
    ///
    /// The clamp passes gradient only strictly inside its bounds.
    pub fn backward(&self, cache: &ForwardCache, d_mean: &Tensor, d_log_std: &[f64]) -> Result<ActorParams> {
        let (mean_grad, _) = self.mean_net.backward(cache, d_mean)?;
        let masked = self
            .log_std
            .data()
            .iter()
            .zip(d_log_std)
            .map(|(&raw, &g)| if raw > LOG_STD_MIN && raw < LOG_STD_MAX { g } else { 0.0 })
            .collect();
        Ok(ActorParams {
            mean_net: mean_grad,
            log_std: Tensor::vector(masked),
            obs_norm: None,
        })
    }

    pub fn checksum(&self) -> u64 {
        self.named_tensors()
            .iter()
            .fold(0u64, |acc, (_, t)| acc.rotate_left(7) ^ t.checksum())
    }

    pub fn to_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.insert(&format!("{prefix}.actor"), self);
    }
}

impl ParamSet for ActorParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = self
            .mean_net
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("mean_net.{n}"), t))
            .collect();
        v.push(("log_std".to_string(), &self.log_std));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mean_net.tensors_mut();
        v.push(&mut self.log_std);
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            mean_net: self.mean_net.zeros_like(),
            log_std: Tensor::zeros(self.log_std.shape()),
            obs_norm: None,
        }
    }
}

impl CriticParams {
    pub fn init<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            value_net: MlpParams::init(&layer_sizes(state_dim, hidden, 1), rng),
            obs_norm: None,
        }
    }

    pub fn init_default<R: Rng + ?Sized>(state_dim: usize, rng: &mut R) -> Self {
        Self::init(state_dim, &DEFAULT_HIDDEN, rng)
    }

    pub fn zeros(state_dim: usize, hidden: &[usize]) -> Self {
        Self {
            value_net: MlpParams::zeros(&layer_sizes(state_dim, hidden, 1)),
            obs_norm: None,
        }
    }

    /// Per-row values of a `batch x state_dim` matrix.
    pub fn values(&self, states: &Tensor) -> Result<Vec<f64>> {
        let input = normalized(&self.obs_norm, states)?;
        Ok(self.value_net.predict(&input)?.into_data())
    }

    /// Values as a `batch x 1` matrix with the cache for
    /// [`CriticParams::backward`].
    pub fn forward(&self, states: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let input = normalized(&self.obs_norm, states)?;
        self.value_net.forward(&input)
    }

    pub fn backward(&self, cache: &ForwardCache, d_value: &Tensor) -> Result<CriticParams> {
        let (value_net, _) = self.value_net.backward(cache, d_value)?;
        Ok(CriticParams { value_net, obs_norm: None })
    }
}

impl ParamSet for CriticParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.value_net
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("value_net.{n}"), t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.value_net.tensors_mut()
    }

    fn zeros_like(&self) -> Self {
        Self {
            value_net: self.value_net.zeros_like(),
            obs_norm: None,
        }
    }
}

impl GaussianDist {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape(format!(
                "mean has {} dims, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Numeric("std must be finite and strictly positive".into()));
        }
        Ok(Self {
            mean: Tensor::vector(mean),
            std: Tensor::vector(std),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[dim]),
            std: Tensor::filled(&[dim], 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_state(actor_in: usize, state: &[f64]) -> Result<()> {
    if state.len() != actor_in {
        return Err(Error::Shape(format!(
            "state has {} entries, network expects {actor_in}",
            state.len()
        )));
    }
    Ok(())
}

/// `pi(. | state)`.
pub fn policy_distribution(actor: &ActorParams, state: &[f64]) -> Result<GaussianDist> {
    check_state(actor.state_dim(), state)?;
    let x = Tensor::new(vec![1, state.len()], state.to_vec())?;
    let mean = actor.means(&x)?.into_data();
    Ok(GaussianDist {
        mean: Tensor::vector(mean),
        std: Tensor::vector(actor.std()),
    })
}

/// Log density of a diagonal Gaussian given per-dimension mean, std, log std.
#[inline]
pub fn log_prob_parts(mean: &[f64], std: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..mean.len() {
        let z = (action[d] - mean[d]) / std[d];
        s += -log_std[d] - HALF_LN_2PI - 0.5 * z * z;
    }
    s
}

/// Gradient of the log density w.r.t. the mean and the log std.
#[inline]
pub fn log_prob_grad(mean: &[f64], std: &[f64], action: &[f64], d_mean: &mut [f64], d_log_std: &mut [f64]) {
    for d in 0..mean.len() {
        let diff = action[d] - mean[d];
        let var = std[d] * std[d];
        d_mean[d] = diff / var;
        d_log_std[d] = -1.0 + diff * diff / var;
    }
}

pub fn log_prob(dist: &GaussianDist, action: &[f64]) -> Result<f64> {
    if action.len() != dist.dim() {
        return Err(Error::Shape(format!(
            "action has {} entries, distribution has {} dims",
            action.len(),
            dist.dim()
        )));
    }
    let log_std: Vec<f64> = dist.std.data().iter().map(|s| s.ln()).collect();
    Ok(log_prob_parts(dist.mean.data(), dist.std.data(), &log_std, action))
}

/// `KL(p || q)` per dimension summed, given means and log stds.
#[inline]
pub fn kl_parts(mu_p: &[f64], log_std_p: &[f64], mu_q: &[f64], log_std_q: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..mu_p.len() {
        let var_p = (2.0 * log_std_p[d]).exp();
        let var_q = (2.0 * log_std_q[d]).exp();
        let diff = mu_p[d] - mu_q[d];
        s += log_std_q[d] - log_std_p[d] + (var_p + diff * diff) / (2.0 * var_q) - 0.5;
    }
    s
}

/// Gradient of `KL(p || q)` w.r.t. `p`'s mean and log std.
#[inline]
pub fn kl_grad_p(
    mu_p: &[f64],
    log_std_p: &[f64],
    mu_q: &[f64],
    log_std_q: &[f64],
    d_mu: &mut [f64],
    d_log_std: &mut [f64],
) {
    for d in 0..mu_p.len() {
        let var_q = (2.0 * log_std_q[d]).exp();
        let var_p = (2.0 * log_std_p[d]).exp();
        d_mu[d] = (mu_p[d] - mu_q[d]) / var_q;
        d_log_std[d] = var_p / var_q - 1.0;
    }
}

/// Gradient of `KL(p || q)` w.r.t. `q`'s mean and log std.
#[inline]
pub fn kl_grad_q(
    mu_p: &[f64],
    log_std_p: &[f64],
    mu_q: &[f64],
    log_std_q: &[f64],
    d_mu: &mut [f64],
    d_log_std: &mut [f64],
) {
    for d in 0..mu_p.len() {
        let var_q = (2.0 * log_std_q[d]).exp();
        let var_p = (2.0 * log_std_p[d]).exp();
        let diff = mu_p[d] - mu_q[d];
        d_mu[d] = -diff / var_q;
        d_log_std[d] = 1.0 - (var_p + diff * diff) / var_q;
    }
}

pub fn kl_divergence(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!(
            "KL between {}-dim and {}-dim distributions",
            p.dim(),
            q.dim()
        )));
    }
    let lp: Vec<f64> = p.std.data().iter().map(|s| s.ln()).collect();
    let lq: Vec<f64> = q.std.data().iter().map(|s| s.ln()).collect();
    Ok(kl_parts(p.mean.data(), &lp, q.mean.data(), &lq))
}

/// `a = mean + std * z` with `z ~ N(0, I)` drawn from `rng`.
pub fn sample_action<R: Rng + ?Sized>(dist: &GaussianDist, rng: &mut R) -> Vec<f64> {
    dist.mean
        .data()
        .iter()
        .zip(dist.std.data())
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect()
}

pub fn value(critic: &CriticParams, state: &[f64]) -> Result<f64> {
    check_state(critic.value_net.in_dim(), state)?;
    let x = Tensor::new(vec![1, state.len()], state.to_vec())?;
    Ok(critic.value_net.predict(&x)?.data()[0])
}

pub fn entropy(dist: &GaussianDist) -> f64 {
    dist.std
        .data()
        .iter()
        .map(|s| 0.5 + HALF_LN_2PI + s.ln())
        .sum()
}
