use p2pdrl::algos::{distill_loss, kl_from_sources, Algorithm, Hyperparams, Trainer};
use p2pdrl::envs::{EnvSpec, Partition, PartitionScheme, RandomizationConfig, Task};
use p2pdrl::numerics::{ParamSet, Tensor};
use p2pdrl::policy::ActorParams;
use p2pdrl::rng::stream;
use rand::Rng as _;

fn small_hp(workers: usize) -> Hyperparams {
    Hyperparams {
        workers,
        steps_per_worker: 256,
        epochs: 2,
        ..Hyperparams::default()
    }
}

fn trainer(algo: Algorithm, hp: Hyperparams, seed: u64) -> Trainer {
    Trainer::new(
        algo,
        EnvSpec::pendulum(),
        hp,
        RandomizationConfig::new(Task::Pendulum, 0.3),
        PartitionScheme::None,
        seed,
    )
    .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn assert_same_trajectory(mut a: Trainer, mut b: Trainer, iterations: usize) {
    for it in 0..iterations {
        let ma = a.iterate().unwrap();
        let mb = b.iterate().unwrap();
        assert_eq!(ma.workers[0].mean_episode_return, mb.workers[0].mean_episode_return);
        let (wa, wb) = (a.worker_actors()[0].flatten(), b.worker_actors()[0].flatten());
        assert!(max_abs_diff(&wa, &wb) <= 1e-12, "iteration {it}: actors diverge");
    }
}

#[test]
fn single_worker_p2pdrl_without_distillation_is_ppo() {
    let hp = Hyperparams {
        alpha: 0.0,
        epochs: 3,
        ..small_hp(1)
    };
    assert_same_trajectory(trainer(Algorithm::P2pdrl, hp.clone(), 5), trainer(Algorithm::Ppo, hp, 5), 4);
}

#[test]
fn single_slot_distributed_ppo_is_ppo() {
    let hp = Hyperparams { epochs: 3, ..small_hp(1) };
    assert_same_trajectory(trainer(Algorithm::Dppo, hp.clone(), 6), trainer(Algorithm::Ppo, hp, 6), 4);
}

#[test]
fn identical_workers_have_zero_distillation_loss_and_gradient() {
    let mut rng = stream(31, &[]);
    let actor = ActorParams::init_default(3, 1, &mut rng);
    let states = Tensor::new(vec![64, 3], (0..192).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    for k in 2..=4 {
        let copies: Vec<ActorParams> = (0..k - 1).map(|_| actor.clone()).collect();
        let peers: Vec<&ActorParams> = copies.iter().collect();
        let out = distill_loss(&actor, &peers, &states).unwrap();
        assert_eq!(out.loss, 0.0, "K={k}");
        assert!(out.grad.sq_norm().sqrt() <= 1e-10, "K={k}");
    }
}

#[test]
fn distillation_pulls_workers_together() {
    // With a strong coefficient the workers' policies stay closer than
    // without distillation.
    let spread = |alpha: f64| {
        let mut t = trainer(Algorithm::P2pdrl, Hyperparams { alpha, ..small_hp(2) }, 8);
        for _ in 0..3 {
            t.iterate().unwrap();
        }
        let a = t.worker_actors();
        let states = Tensor::new(vec![4, 3], vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.5, 0.0, 1.0, -0.5, 0.7, 0.7, 0.1]).unwrap();
        distill_loss(a[0], &[a[1]], &states).unwrap().loss
    };
    assert!(spread(10.0) < spread(0.0));
}

#[test]
fn snapshot_mode_differs_from_live_peers() {
    let run = |snapshot: bool| {
        let mut t = trainer(
            Algorithm::P2pdrl,
            Hyperparams {
                snapshot_per_epoch: snapshot,
                ..small_hp(2)
            },
            12,
        );
        t.iterate().unwrap();
        t.worker_actors()[1].flatten()
    };
    assert_ne!(run(false), run(true));
}

fn pendulum_states(n: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, &[]);
    let mut data = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let th: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        data.extend([th.cos(), th.sin(), rng.random_range(-1.0..1.0)]);
    }
    Tensor::new(vec![n, 3], data).unwrap()
}

#[test]
fn distral_global_tracks_the_locals() {
    let mut t = trainer(Algorithm::Distral, small_hp(2), 14);
    let states = pendulum_states(512, 3);
    let before = t.global_actor().unwrap().clone();
    for _ in 0..6 {
        t.iterate().unwrap();
    }
    let global = t.global_actor().unwrap();
    let locals = t.worker_actors();
    let sources: Vec<(&ActorParams, &Tensor)> = locals.iter().map(|a| (*a, &states)).collect();
    // Locals drift away from the initial policy while the global follows them.
    let now = kl_from_sources(global, &sources).unwrap().loss;
    let then = kl_from_sources(&before, &sources).unwrap().loss;
    assert!(2.0 * now < then, "{now} vs {then}");
}

#[test]
fn dnc_resets_locals_to_the_global_every_period() {
    let hp = Hyperparams {
        dnc_period: Some(2),
        ..small_hp(2)
    };
    let mut t = trainer(Algorithm::Dnc, hp, 15);
    let g0 = t.global_actor().unwrap().flatten();
    t.iterate().unwrap();
    // No reset yet: locals have moved away, the global has not changed.
    assert_eq!(t.global_actor().unwrap().flatten(), g0);
    assert_ne!(t.worker_actors()[0].flatten(), g0);
    t.iterate().unwrap();
    let g = t.global_actor().unwrap().flatten();
    assert_ne!(g, g0);
    for w in t.workers().unwrap() {
        assert_eq!(w.learner.actor.flatten(), g);
        assert_eq!(w.learner.actor_opt.step_count(), 0);
    }
}

#[test]
fn dnc_without_period_never_resets() {
    let hp = Hyperparams {
        dnc_period: None,
        ..small_hp(2)
    };
    let mut t = trainer(Algorithm::Dnc, hp, 16);
    let g0 = t.global_actor().unwrap().flatten();
    for _ in 0..3 {
        t.iterate().unwrap();
    }
    assert_eq!(t.global_actor().unwrap().flatten(), g0);
}

#[test]
fn every_algorithm_spends_exactly_the_budget() {
    for algo in Algorithm::ALL {
        let mut t = trainer(algo, small_hp(2), 17);
        for i in 1..=2 {
            let m = t.iterate().unwrap();
            assert_eq!(m.env_steps, 512);
            assert_eq!(t.env_steps(), 512 * i);
            assert!(m.workers.iter().all(|w| w.ppo_loss.is_finite() && w.value_loss.is_finite()));
        }
    }
}

#[test]
fn wind_halves_split_workers_by_sign() {
    let mut t = Trainer::new(
        Algorithm::P2pdrl,
        EnvSpec::pendulum(),
        Hyperparams {
            epochs: 1,
            ..small_hp(4)
        },
        RandomizationConfig::new(Task::Pendulum, 0.8),
        PartitionScheme::WindHalves,
        18,
    )
    .unwrap();
    t.iterate().unwrap();
    for w in t.workers().unwrap() {
        let want = PartitionScheme::WindHalves.for_worker(w.id);
        assert_eq!(w.sampler.rand_cfg.partition, want);
        match want {
            Partition::WindNegative => assert!(w.sampler.domain.wind <= 0.0),
            Partition::WindPositive => assert!(w.sampler.domain.wind >= 0.0),
            Partition::None => unreachable!(),
        }
    }
}

#[test]
fn optional_stabilizers_run_and_change_training() {
    let base = small_hp(2);
    let variants = [
        Hyperparams { entropy_coef: 0.01, ..base.clone() },
        Hyperparams { value_clip: Some(0.2), ..base.clone() },
        Hyperparams { max_grad_norm: Some(0.1), ..base.clone() },
        Hyperparams { normalize_observations: true, ..base.clone() },
        Hyperparams { normalize_rewards: false, ..base.clone() },
    ];
    let reference = {
        let mut t = trainer(Algorithm::P2pdrl, base.clone(), 19);
        t.iterate().unwrap();
        t.iterate().unwrap();
        t.worker_actors()[0].flatten()
    };
    for hp in variants {
        let mut t = trainer(Algorithm::P2pdrl, hp.clone(), 19);
        t.iterate().unwrap();
        t.iterate().unwrap();
        assert_ne!(t.worker_actors()[0].flatten(), reference, "{hp:?}");
        if hp.normalize_observations {
            assert!(t.worker_actors().iter().all(|a| a.obs_norm.is_some()));
        }
    }
}

#[test]
fn invalid_hyperparameters_name_their_key() {
    let cases: [(Hyperparams, &str); 4] = [
        (Hyperparams { gamma: 1.5, ..Hyperparams::default() }, "gamma"),
        (Hyperparams { alpha: -1.0, ..Hyperparams::default() }, "alpha"),
        (Hyperparams { workers: 0, ..Hyperparams::default() }, "workers"),
        (Hyperparams { clip_eps: 0.0, ..Hyperparams::default() }, "clip_eps"),
    ];
    for (hp, key) in cases {
        let err = hp.validate().unwrap_err();
        assert!(err.is_config() && err.to_string().contains(key), "{err}");
    }
}
