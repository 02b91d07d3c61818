use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::policy::{kl_grad_p, kl_grad_q, kl_parts, log_prob_grad, log_prob_parts, ActorParams, CriticParams, LOG_STD_MAX, LOG_STD_MIN};

use super::rollout::Minibatch;

/// A scalar loss and its gradient w.r.t. one parameter set.
#[derive(Debug, Clone)]
pub struct LossGrad<P> {
    pub loss: f64,
    pub grad: P,
}

/// Negated PPO clipped surrogate, `-mean(min(r A, clip(r, 1-eps, 1+eps) A))`
/// with `r = exp(log pi(a|s) - log pi_old(a|s))`.
pub fn ppo_loss(actor: &ActorParams, mb: &Minibatch, clip_eps: f64) -> Result<LossGrad<ActorParams>> {
    let n = mb.len();
    if n == 0 {
        return Err(Error::State("empty minibatch".into()));
    }
    let a_dim = actor.action_dim();
    let (means, cache) = actor.forward(&mb.states)?;
    let log_std = actor.clamped_log_std();
    let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut d_mean = vec![0.0; n * a_dim];
    let mut d_log_std = vec![0.0; a_dim];
    let mut g_mu = vec![0.0; a_dim];
    let mut g_ls = vec![0.0; a_dim];
    for b in 0..n {
        let mu = means.row(b);
        let act = mb.actions.row(b);
        let logp = log_prob_parts(mu, &std, &log_std, act);
        let ratio = (logp - mb.old_log_probs[b]).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite probability ratio at minibatch sample {b} (log-prob {logp}, old {})",
                mb.old_log_probs[b]
            )));
        }
        let adv = mb.advantages[b];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        let term = unclipped.min(clipped);
        loss -= term * inv_n;
        // d(term)/d(log p) is r*A when the unclipped branch attains the min.
        if unclipped <= clipped {
            let coef = -inv_n * unclipped;
            log_prob_grad(mu, &std, act, &mut g_mu, &mut g_ls);
            for d in 0..a_dim {
                d_mean[b * a_dim + d] = coef * g_mu[d];
                d_log_std[d] += coef * g_ls[d];
            }
        }
    }
    let d_mean = Tensor::new(vec![n, a_dim], d_mean)?;
    let grad = actor.backward(&cache, &d_mean, &d_log_std)?;
    Ok(LossGrad { loss, grad })
}

/// Mean over `targets` and over rows of `states` of `KL(actor || target)`,
/// differentiated w.r.t. `actor` only. Empty `targets` gives zero.
pub fn kl_to_targets(actor: &ActorParams, targets: &[&ActorParams], states: &Tensor) -> Result<LossGrad<ActorParams>> {
    if targets.is_empty() {
        return Ok(LossGrad {
            loss: 0.0,
            grad: actor.zeros_like(),
        });
    }
    let n = states.rows();
    let a_dim = actor.action_dim();
    let (means, cache) = actor.forward(states)?;
    let log_std = actor.clamped_log_std();
    let scale = 1.0 / (n as f64 * targets.len() as f64);

    let mut loss = 0.0;
    let mut d_mean = vec![0.0; n * a_dim];
    let mut d_log_std = vec![0.0; a_dim];
    let mut g_mu = vec![0.0; a_dim];
    let mut g_ls = vec![0.0; a_dim];
    for target in targets {
        if target.action_dim() != a_dim || target.state_dim() != actor.state_dim() {
            return Err(Error::Shape("peer policy has a different layout".into()));
        }
        let t_means = target.means(states)?;
        let t_log_std = target.clamped_log_std();
        for b in 0..n {
            let mu_p = means.row(b);
            let mu_q = t_means.row(b);
            loss += scale * kl_parts(mu_p, &log_std, mu_q, &t_log_std);
            kl_grad_p(mu_p, &log_std, mu_q, &t_log_std, &mut g_mu, &mut g_ls);
            for d in 0..a_dim {
                d_mean[b * a_dim + d] += scale * g_mu[d];
                d_log_std[d] += scale * g_ls[d];
            }
        }
    }
    let d_mean = Tensor::new(vec![n, a_dim], d_mean)?;
    let grad = actor.backward(&cache, &d_mean, &d_log_std)?;
    Ok(LossGrad { loss, grad })
}

/// Peer distillation loss for one worker: the mean over its `K - 1` peers of
/// the batch-mean `KL(pi_i || pi_k)` on the worker's own states. Peers are
/// constants; with no peers the loss and gradient are zero.
pub fn distill_loss(actor: &ActorParams, peers: &[&ActorParams], states: &Tensor) -> Result<LossGrad<ActorParams>> {
    kl_to_targets(actor, peers, states)
}

/// `sum_i mean_{s in batch_i} KL(source_i(s) || student(s))`, differentiated
/// w.r.t. `student` only. Used to distil local policies into a global one.
pub fn kl_from_sources(student: &ActorParams, sources: &[(&ActorParams, &Tensor)]) -> Result<LossGrad<ActorParams>> {
    let a_dim = student.action_dim();
    let s_log_std = student.clamped_log_std();
    let mut total = LossGrad {
        loss: 0.0,
        grad: student.zeros_like(),
    };
    let mut g_mu = vec![0.0; a_dim];
    let mut g_ls = vec![0.0; a_dim];
    for (source, states) in sources {
        let n = states.rows();
        if n == 0 {
            continue;
        }
        let scale = 1.0 / n as f64;
        let (s_means, cache) = student.forward(states)?;
        let p_means = source.means(states)?;
        let p_log_std = source.clamped_log_std();
        let mut d_mean = vec![0.0; n * a_dim];
        let mut d_log_std = vec![0.0; a_dim];
        for b in 0..n {
            let mu_p = p_means.row(b);
            let mu_q = s_means.row(b);
            total.loss += scale * kl_parts(mu_p, &p_log_std, mu_q, &s_log_std);
            kl_grad_q(mu_p, &p_log_std, mu_q, &s_log_std, &mut g_mu, &mut g_ls);
            for d in 0..a_dim {
                d_mean[b * a_dim + d] = scale * g_mu[d];
                d_log_std[d] += scale * g_ls[d];
            }
        }
        let d_mean = Tensor::new(vec![n, a_dim], d_mean)?;
        let g = student.backward(&cache, &d_mean, &d_log_std)?;
        total.grad.add_scaled(&g, 1.0);
    }
    Ok(total)
}

/// Mean squared error between `V(s)` and the value targets.
pub fn value_loss(critic: &CriticParams, states: &Tensor, targets: &[f64]) -> Result<LossGrad<CriticParams>> {
    let n = states.rows();
    if targets.len() != n {
        return Err(Error::Shape(format!("{n} states but {} value targets", targets.len())));
    }
    if n == 0 {
        return Err(Error::State("empty minibatch".into()));
    }
    let (v, cache) = critic.forward(states)?;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dv = Vec::with_capacity(n);
    for (vi, ti) in v.data().iter().zip(targets) {
        let e = vi - ti;
        loss += e * e * inv_n;
        dv.push(2.0 * e * inv_n);
    }
    let grad = critic.backward(&cache, &Tensor::new(vec![n, 1], dv)?)?;
    Ok(LossGrad { loss, grad })
}

/// `mean(max((V - R)^2, (V_old + clip(V - V_old, -c, c) - R)^2))`.
pub fn clipped_value_loss(critic: &CriticParams, states: &Tensor, targets: &[f64], old_values: &[f64], clip: f64) -> Result<LossGrad<CriticParams>> {
    let n = states.rows();
    if targets.len() != n || old_values.len() != n {
        return Err(Error::Shape(format!(
            "{n} states but {} value targets and {} old values",
            targets.len(),
            old_values.len()
        )));
    }
    if n == 0 {
        return Err(Error::State("empty minibatch".into()));
    }
    let (v, cache) = critic.forward(states)?;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dv = Vec::with_capacity(n);
    for ((vi, ti), oi) in v.data().iter().zip(targets).zip(old_values) {
        let e = vi - ti;
        let ec = oi + (vi - oi).clamp(-clip, clip) - ti;
        if e * e >= ec * ec {
            loss += e * e * inv_n;
            dv.push(2.0 * e * inv_n);
        } else {
            loss += ec * ec * inv_n;
            dv.push(0.0);
        }
    }
    let grad = critic.backward(&cache, &Tensor::new(vec![n, 1], dv)?)?;
    Ok(LossGrad { loss, grad })
}

/// Gradient of the policy entropy `sum_d (log_std_d + 0.5 + 0.5 ln 2 pi)`.
/// Only the log std carries it, and only inside the clamp.
pub fn entropy_grad(actor: &ActorParams) -> ActorParams {
    let mut g = actor.zeros_like();
    for (gd, &raw) in g.log_std.data_mut().iter_mut().zip(actor.log_std.data()) {
        if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
            *gd = 1.0;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn single_sample(ratio: f64, adv: f64) -> (ActorParams, Minibatch) {
        let actor = ActorParams::zeros(1, 1, &[2]);
        // N(0, 1) at a = 0: log p = -0.5 ln(2 pi).
        let logp = -crate::policy::HALF_LN_2PI;
        let mb = Minibatch {
            states: Tensor::zeros(&[1, 1]),
            actions: Tensor::zeros(&[1, 1]),
            old_log_probs: vec![logp - ratio.ln()],
            advantages: vec![adv],
            targets: vec![0.0],
            old_values: vec![0.0],
        };
        (actor, mb)
    }

    #[test]
    fn clipped_branches() {
        let (a, mb) = single_sample(1.5, 1.0);
        assert!((ppo_loss(&a, &mb, 0.2).unwrap().loss + 1.2).abs() < 1e-12);
        let (a, mb) = single_sample(0.5, -1.0);
        assert!((ppo_loss(&a, &mb, 0.2).unwrap().loss - 0.8).abs() < 1e-12);
        // Clipped branch carries no gradient.
        let (a, mb) = single_sample(1.5, 1.0);
        assert_eq!(ppo_loss(&a, &mb, 0.2).unwrap().grad.sq_norm(), 0.0);
    }

    #[test]
    fn non_finite_ratio_names_sample() {
        let (a, mut mb) = single_sample(1.0, 1.0);
        mb.old_log_probs[0] = -1e6;
        let err = ppo_loss(&a, &mb, 0.2).unwrap_err();
        assert!(err.to_string().contains("sample 0"), "{err}");
    }

    #[test]
    fn ratio_one_is_vanilla_policy_gradient() {
        let mut r = stream(2, &[1]);
        let actor = ActorParams::init(2, 1, &[6], &mut r);
        let states = Tensor::new(vec![4, 2], (0..8).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let means = actor.means(&states).unwrap();
        let actions: Vec<f64> = (0..4).map(|b| means.row(b)[0] + r.random_range(-1.0..1.0)).collect();
        let log_std = actor.clamped_log_std();
        let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
        let old: Vec<f64> = (0..4)
            .map(|b| log_prob_parts(means.row(b), &std, &log_std, &actions[b..=b]))
            .collect();
        let adv = vec![0.5, -1.0, 2.0, 0.1];
        let mb = Minibatch {
            states: states.clone(),
            actions: Tensor::new(vec![4, 1], actions.clone()).unwrap(),
            old_log_probs: old,
            advantages: adv.clone(),
            targets: vec![0.0; 4],
            old_values: vec![0.0; 4],
        };
        let out = ppo_loss(&actor, &mb, 0.2).unwrap();
        assert!((out.loss + adv.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        // -mean(A * grad log p)
        let (_, cache) = actor.forward(&states).unwrap();
        let mut dm = vec![0.0; 4];
        let mut dls = vec![0.0];
        for b in 0..4 {
            let diff = actions[b] - means.row(b)[0];
            dm[b] = -adv[b] / 4.0 * diff / (std[0] * std[0]);
            dls[0] += -adv[b] / 4.0 * (-1.0 + diff * diff / (std[0] * std[0]));
        }
        let pg = actor.backward(&cache, &Tensor::new(vec![4, 1], dm).unwrap(), &dls).unwrap();
        for (x, y) in out.grad.flatten().iter().zip(pg.flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distill_with_no_peers_is_zero() {
        let mut r = stream(3, &[1]);
        let actor = ActorParams::init(2, 1, &[4], &mut r);
        let out = distill_loss(&actor, &[], &Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad.sq_norm(), 0.0);
    }

    #[test]
    fn value_loss_constant_offset() {
        let critic = CriticParams::zeros(2, &[3]);
        let states = Tensor::zeros(&[5, 2]);
        assert_eq!(value_loss(&critic, &states, &[0.0; 5]).unwrap().loss, 0.0);
        let out = value_loss(&critic, &states, &[1.5; 5]).unwrap();
        assert!((out.loss - 2.25).abs() < 1e-12);
    }
}
