//! Analytic gradients against central finite differences.

use p2pdrl::algos::{clipped_value_loss, distill_loss, kl_from_sources, ppo_loss, value_loss, Minibatch};
use p2pdrl::numerics::{MlpParams, ParamSet, Tensor};
use p2pdrl::policy::{log_prob_parts, ActorParams, CriticParams};
use p2pdrl::rng::{stream, Rng};
use proptest::prelude::*;
use rand::Rng as _;

const H: f64 = 1e-6;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-7;

fn fd_check<P: ParamSet + Clone>(params: &P, analytic: &P, f: impl Fn(&P) -> f64) {
    let base = params.flatten();
    let grad = analytic.flatten();
    let mut probe = params.clone();
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + H;
        probe.assign_flat(&x).unwrap();
        let up = f(&probe);
        x[i] = base[i] - H;
        probe.assign_flat(&x).unwrap();
        let down = f(&probe);
        let fd = (up - down) / (2.0 * H);
        assert!(
            (grad[i] - fd).abs() <= ATOL + RTOL * fd.abs(),
            "coordinate {i}: analytic {} vs finite difference {fd}",
            grad[i]
        );
    }
}

fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_actor(rng: &mut Rng, s: usize, a: usize, hidden: usize) -> ActorParams {
    let mut actor = ActorParams::init(s, a, &[hidden, hidden], rng);
    for v in actor.log_std.data_mut() {
        *v = rng.random_range(-1.0..0.5);
    }
    actor
}

/// A minibatch whose behaviour policy is a perturbed copy of `actor`, so the
/// ratios spread on both sides of the clip range.
fn random_minibatch(rng: &mut Rng, actor: &ActorParams, n: usize) -> Minibatch {
    let (s, a) = (actor.state_dim(), actor.action_dim());
    let states = random_tensor(rng, &[n, s], 1.5);
    let actions = random_tensor(rng, &[n, a], 2.0);
    let mut old = actor.clone();
    let noise: Vec<f64> = old.flatten().iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
    old.assign_flat(&noise).unwrap();
    let means = old.means(&states).unwrap();
    let ls = old.clamped_log_std();
    let std: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
    Minibatch {
        old_log_probs: (0..n).map(|b| log_prob_parts(means.row(b), &std, &ls, actions.row(b))).collect(),
        advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        targets: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        old_values: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        states,
        actions,
    }
}

#[test]
fn ppo_distill_and_value_gradients_on_fifty_random_cases() {
    let mut rng = stream(0xFD, &[1]);
    for case in 0..50 {
        let s = rng.random_range(1..=4);
        let a = rng.random_range(1..=3);
        let hidden = rng.random_range(2..=5);
        let n = rng.random_range(1..=8);
        let actor = random_actor(&mut rng, s, a, hidden);
        let mb = random_minibatch(&mut rng, &actor, n);

        let ppo = ppo_loss(&actor, &mb, 0.2).unwrap();
        fd_check(&actor, &ppo.grad, |p| ppo_loss(p, &mb, 0.2).unwrap().loss);

        let peers: Vec<ActorParams> = (0..1 + case % 3).map(|_| random_actor(&mut rng, s, a, hidden)).collect();
        let peer_refs: Vec<&ActorParams> = peers.iter().collect();
        let dis = distill_loss(&actor, &peer_refs, &mb.states).unwrap();
        fd_check(&actor, &dis.grad, |p| distill_loss(p, &peer_refs, &mb.states).unwrap().loss);

        let critic = CriticParams::init(s, &[hidden, hidden], &mut rng);
        let v = value_loss(&critic, &mb.states, &mb.targets).unwrap();
        fd_check(&critic, &v.grad, |c| value_loss(c, &mb.states, &mb.targets).unwrap().loss);
    }
}

#[test]
fn global_distillation_and_clipped_value_gradients() {
    let mut rng = stream(0xFD, &[2]);
    for _ in 0..20 {
        let (s, a, hidden) = (3, 2, 4);
        let student = random_actor(&mut rng, s, a, hidden);
        let sources: Vec<(ActorParams, Tensor)> = (0..3)
            .map(|_| (random_actor(&mut rng, s, a, hidden), random_tensor(&mut rng, &[5, s], 1.0)))
            .collect();
        let refs: Vec<(&ActorParams, &Tensor)> = sources.iter().map(|(p, t)| (p, t)).collect();
        let g = kl_from_sources(&student, &refs).unwrap();
        fd_check(&student, &g.grad, |p| kl_from_sources(p, &refs).unwrap().loss);

        let actor = random_actor(&mut rng, s, a, hidden);
        let mb = random_minibatch(&mut rng, &actor, 6);
        let critic = CriticParams::init(s, &[hidden], &mut rng);
        let v = clipped_value_loss(&critic, &mb.states, &mb.targets, &mb.old_values, 0.5).unwrap();
        fd_check(&critic, &v.grad, |c| {
            clipped_value_loss(c, &mb.states, &mb.targets, &mb.old_values, 0.5).unwrap().loss
        });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mlp_backward_matches_finite_differences(
        seed in any::<u64>(),
        sizes in prop::collection::vec(1usize..5, 2..5),
        batch in 1usize..6,
    ) {
        let mut rng = stream(seed, &[]);
        let net = MlpParams::init(&sizes, &mut rng);
        let x = random_tensor(&mut rng, &[batch, sizes[0]], 2.0);
        let w = random_tensor(&mut rng, &[batch, *sizes.last().unwrap()], 1.0);
        // Scalar objective sum(w * f(x)).
        let objective = |p: &MlpParams| -> f64 {
            p.predict(&x).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward(&x).unwrap();
        let (grad, dx) = net.backward(&cache, &w).unwrap();
        fd_check(&net, &grad, objective);

        // Input gradient.
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += H;
            let mut xm = x.clone();
            xm.data_mut()[i] -= H;
            let f = |t: &Tensor| -> f64 { net.predict(t).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum() };
            let fd = (f(&xp) - f(&xm)) / (2.0 * H);
            prop_assert!((dx.data()[i] - fd).abs() <= ATOL + RTOL * fd.abs());
        }
    }

    #[test]
    fn clipped_surrogate_never_exceeds_unclipped(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = stream(seed, &[]);
        let actor = random_actor(&mut rng, 2, 1, 3);
        let mb = random_minibatch(&mut rng, &actor, n);
        // With an enormous clip range the loss is the plain surrogate.
        let clipped = ppo_loss(&actor, &mb, 0.2).unwrap().loss;
        let unclipped = ppo_loss(&actor, &mb, 1e9).unwrap().loss;
        prop_assert!(clipped >= unclipped - 1e-12);
    }

    #[test]
    fn advantage_scaling_scales_the_loss(seed in any::<u64>(), c in 0.01f64..50.0) {
        let mut rng = stream(seed, &[]);
        let actor = random_actor(&mut rng, 2, 2, 3);
        let mb = random_minibatch(&mut rng, &actor, 7);
        let mut scaled = mb.clone();
        for a in &mut scaled.advantages {
            *a *= c;
        }
        let l1 = ppo_loss(&actor, &mb, 0.2).unwrap().loss;
        let l2 = ppo_loss(&actor, &scaled, 0.2).unwrap().loss;
        prop_assert!((l2 - c * l1).abs() <= 1e-9 * (1.0 + l2.abs()));
    }
}
