use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use p2pdrl::algos::{compute_gae, initial_params, ppo_loss, Sampler};
use p2pdrl::envs::{env_reset, env_step, EnvSpec, RandomizationConfig, Task};
use p2pdrl::numerics::{AdamState, MlpParams, Tensor, DEFAULT_HIDDEN};
use p2pdrl::rng::stream;

fn mlp(c: &mut Criterion) {
    let mut rng = stream(1, &[]);
    let net = MlpParams::init(&[3, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], 1], &mut rng);
    let input = Tensor::new(vec![64, 3], (0..192).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let (out, cache) = net.forward(&input).unwrap();
    let grad_out = Tensor::new(vec![64, 1], vec![1.0; out.data().len()]).unwrap();

    c.bench_function("mlp_forward_64x3", |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
    c.bench_function("mlp_backward_64x3", |b| {
        b.iter(|| net.backward(black_box(&cache), black_box(&grad_out)).unwrap())
    });
}

fn ppo_step(c: &mut Criterion) {
    let spec = EnvSpec::pendulum();
    let (actor, critic) = initial_params(2, &spec);
    let mut sampler = Sampler::new(2, 0, RandomizationConfig::new(Task::Pendulum, 0.2));
    sampler.sample_domain().unwrap();
    let mut traj = sampler.collect(&actor, &critic, &spec, 256).unwrap();
    compute_gae(&mut traj, 0.99, 0.95, 0.0);
    let idx: Vec<usize> = (0..64).collect();
    let mb = traj.minibatch(&idx).unwrap();

    c.bench_function("ppo_minibatch_step", |b| {
        b.iter_batched(
            || (actor.clone(), AdamState::new(&actor)),
            |(mut a, mut opt)| {
                let g = ppo_loss(&a, &mb, 0.2).unwrap();
                opt.step(&mut a, &g.grad, 3e-4).unwrap();
                a
            },
            BatchSize::SmallInput,
        )
    });
}

fn environments(c: &mut Criterion) {
    for task in [Task::Pendulum, Task::Cartpole] {
        let spec = EnvSpec::for_task(task);
        let domain = spec.nominal;
        let state = env_reset(&spec, &domain, &mut stream(3, &[]));
        let action = vec![0.5; spec.action_dim];
        c.bench_function(&format!("env_step_{task}"), |b| {
            b.iter(|| env_step(&spec, &domain, black_box(&state), black_box(&action)).unwrap())
        });
    }
}

fn rollout(c: &mut Criterion) {
    let spec = EnvSpec::pendulum();
    let (actor, critic) = initial_params(4, &spec);
    c.bench_function("collect_1024_pendulum_steps", |b| {
        b.iter_batched(
            || {
                let mut s = Sampler::new(4, 0, RandomizationConfig::new(Task::Pendulum, 0.2));
                s.sample_domain().unwrap();
                s
            },
            |mut s| s.collect(&actor, &critic, &spec, 1024).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, mlp, ppo_step, environments, rollout);
criterion_main!(benches);
