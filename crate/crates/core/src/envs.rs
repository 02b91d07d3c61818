//! Native randomizable control tasks and the diversity-scaled domain sampler.
//!
//! Both tasks expose the same five knobs: a constant wind (horizontal force
//! on the cart, torque bias on the pendulum), gravity, viscous friction, a
//! mass multiplier and an offset of the initial position.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIND_WIDTH: f64 = 5.0;
pub const GRAVITY_WIDTH: f64 = 0.25;
pub const FRICTION_WIDTH: f64 = 0.3;
pub const MASS_WIDTH: f64 = 0.5;
pub const INIT_OFFSET_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pendulum,
    Cartpole,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pendulum => "pendulum",
            Task::Cartpole => "cartpole",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Task::Pendulum),
            "cartpole" => Ok(Task::Cartpole),
            other => Err(Error::config("task", format!("unknown task {other:?} (expected pendulum or cartpole)"))),
        }
    }
}

/// One sampled environment variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub wind: f64,
    pub gravity: f64,
    pub friction_coeff: f64,
    pub mass_scale: f64,
    pub init_offset: f64,
}

/// Which half of the wind interval a sampler may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    #[default]
    None,
    WindNegative,
    WindPositive,
}

/// How partitions are assigned across the workers of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Every worker samples from the full distribution.
    #[default]
    None,
    /// Even workers get negative wind, odd workers positive wind.
    WindHalves,
}

impl PartitionScheme {
    pub fn for_worker(self, worker: usize) -> Partition {
        match self {
            PartitionScheme::None => Partition::None,
            PartitionScheme::WindHalves if worker % 2 == 0 => Partition::WindNegative,
            PartitionScheme::WindHalves => Partition::WindPositive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PartitionScheme::None => "none",
            PartitionScheme::WindHalves => "wind_halves",
        }
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PartitionScheme::None),
            "wind_halves" => Ok(PartitionScheme::WindHalves),
            other => Err(Error::config("partition", format!("unknown partition {other:?} (expected none or wind_halves)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationConfig {
    pub epsilon: f64,
    pub base: DomainParams,
    pub partition: Partition,
    /// Draw a fresh domain at every episode reset instead of once per
    /// rollout.
    pub resample_per_episode: bool,
}

impl RandomizationConfig {
    pub fn new(task: Task, epsilon: f64) -> Self {
        Self {
            epsilon,
            base: EnvSpec::for_task(task).nominal,
            partition: Partition::None,
            resample_per_episode: false,
        }
    }

    pub fn with_partition(mut self, partition: Partition) -> Self {
        self.partition = partition;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(
                "epsilon",
                format!("{} is outside [0, 1]", self.epsilon),
            ));
        }
        Ok(())
    }

    /// `[lo, hi]` for (wind, gravity, friction, mass_scale, init_offset).
    pub fn intervals(&self) -> [(f64, f64); 5] {
        let e = self.epsilon;
        let b = &self.base;
        let wind_half = WIND_WIDTH * e;
        let wind = match self.partition {
            Partition::None => (b.wind - wind_half, b.wind + wind_half),
            Partition::WindNegative => (b.wind - wind_half, b.wind),
            Partition::WindPositive => (b.wind, b.wind + wind_half),
        };
        [
            wind,
            (b.gravity * (1.0 - GRAVITY_WIDTH * e), b.gravity * (1.0 + GRAVITY_WIDTH * e)),
            (b.friction_coeff * (1.0 - FRICTION_WIDTH * e), b.friction_coeff * (1.0 + FRICTION_WIDTH * e)),
            (b.mass_scale * (1.0 - MASS_WIDTH * e), b.mass_scale * (1.0 + MASS_WIDTH * e)),
            (b.init_offset - INIT_OFFSET_WIDTH * e, b.init_offset + INIT_OFFSET_WIDTH * e),
        ]
    }
}

#[inline]
fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    (lo + (hi - lo) * u).clamp(lo, hi)
}

/// Draw one domain. `epsilon = 0` returns the base parameters exactly.
pub fn sample_domain<R: Rng + ?Sized>(cfg: &RandomizationConfig, rng: &mut R) -> Result<DomainParams> {
    cfg.validate()?;
    let [w, g, f, m, x] = cfg.intervals();
    Ok(DomainParams {
        wind: uniform(rng, w),
        gravity: uniform(rng, g),
        friction_coeff: uniform(rng, f),
        mass_scale: uniform(rng, m),
        init_offset: uniform(rng, x),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardId {
    /// `-(angle_err^2 + 0.1 * omega^2 + 0.001 * u^2)`.
    PendulumSwingUp,
    /// `+1` for every step taken.
    CartpoleAlive,
}

/// Static description of a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub task: Task,
    /// Observation width seen by the policy.
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    pub dt: f64,
    pub max_episode_steps: usize,
    pub reward: RewardId,
    /// Nominal dynamics parameters, the centre of every randomized interval.
    pub nominal: DomainParams,
    /// Nominal initial position (pendulum angle, cart position).
    pub start_position: f64,
    /// Half-width of the uniform jitter added to the start position(s) at
    /// every reset, on top of the domain's offset.
    pub start_jitter: f64,
    /// Converts wind units into torque (pendulum) or force (cartpole).
    pub wind_scale: f64,
}

pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_MASS: f64 = 1.0;

pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const CART_FORCE: f64 = 10.0;
pub const CART_X_LIMIT: f64 = 2.4;
pub const POLE_ANGLE_LIMIT: f64 = 12.0 * PI / 180.0;

impl EnvSpec {
    pub fn pendulum() -> Self {
        Self {
            task: Task::Pendulum,
            state_dim: 3,
            action_dim: 1,
            action_low: -2.0,
            action_high: 2.0,
            dt: 0.05,
            max_episode_steps: 200,
            reward: RewardId::PendulumSwingUp,
            nominal: DomainParams {
                wind: 0.0,
                gravity: 9.81,
                friction_coeff: 0.05,
                mass_scale: 1.0,
                init_offset: 0.0,
            },
            start_position: PI,
            start_jitter: PI,
            wind_scale: 0.1,
        }
    }

    pub fn cartpole() -> Self {
        Self {
            task: Task::Cartpole,
            state_dim: 4,
            action_dim: 1,
            action_low: -1.0,
            action_high: 1.0,
            dt: 0.05,
            max_episode_steps: 500,
            reward: RewardId::CartpoleAlive,
            nominal: DomainParams {
                wind: 0.0,
                gravity: 9.81,
                friction_coeff: 0.1,
                mass_scale: 1.0,
                init_offset: 0.0,
            },
            start_position: 0.0,
            start_jitter: 0.05,
            wind_scale: 1.0,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Pendulum => Self::pendulum(),
            Task::Cartpole => Self::cartpole(),
        }
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .map(|a| a.clamp(self.action_low, self.action_high))
            .collect()
    }
}

/// Raw physical state: `[theta, omega]` for the pendulum (theta = 0 upright),
/// `[x, x_dot, theta, theta_dot]` for the cartpole.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState(pub Vec<f64>);

/// Policy input for a physical state.
pub fn observe(spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    match spec.task {
        Task::Pendulum => {
            let (th, om) = (state.0[0], state.0[1]);
            vec![th.cos(), th.sin(), om / PENDULUM_MAX_SPEED]
        }
        Task::Cartpole => state.0.clone(),
    }
}

/// Start state: the position coordinate is drawn from
/// `U(start + offset - jitter, start + offset + jitter)`; velocities are zero.
pub fn env_reset<R: Rng + ?Sized>(spec: &EnvSpec, domain: &DomainParams, rng: &mut R) -> EnvState {
    let centre = spec.start_position + domain.init_offset;
    let j = spec.start_jitter;
    let pos = uniform(rng, (centre - j, centre + j));
    match spec.task {
        Task::Pendulum => EnvState(vec![pos, 0.0]),
        Task::Cartpole => {
            let theta = uniform(rng, (-j, j));
            EnvState(vec![pos, 0.0, theta, 0.0])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub reward: f64,
    /// Environment termination (time limits are handled by the caller).
    pub done: bool,
}

/// Additive contributions to the pendulum's angular acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumAccel {
    pub gravity: f64,
    pub control: f64,
    pub wind: f64,
    pub friction: f64,
}

impl PendulumAccel {
    pub fn total(&self) -> f64 {
        self.gravity + self.control + self.wind + self.friction
    }
}

pub fn pendulum_accel(spec: &EnvSpec, domain: &DomainParams, state: &EnvState, torque: f64) -> PendulumAccel {
    let (th, om) = (state.0[0], state.0[1]);
    let m = PENDULUM_MASS * domain.mass_scale;
    let l = PENDULUM_LENGTH;
    let inertia = m * l * l / 3.0;
    PendulumAccel {
        gravity: m * domain.gravity * 0.5 * l * th.sin() / inertia,
        control: torque / inertia,
        wind: spec.wind_scale * domain.wind / inertia,
        friction: -domain.friction_coeff * om / inertia,
    }
}

/// Total mechanical energy of the pendulum (zero potential at the pivot).
pub fn pendulum_energy(domain: &DomainParams, state: &EnvState) -> f64 {
    let m = PENDULUM_MASS * domain.mass_scale;
    let l = PENDULUM_LENGTH;
    let inertia = m * l * l / 3.0;
    0.5 * inertia * state.0[1] * state.0[1] + m * domain.gravity * 0.5 * l * state.0[0].cos()
}

fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Advance one `dt` with semi-implicit Euler. The action is clipped to the
/// task bounds first.
pub fn env_step(spec: &EnvSpec, domain: &DomainParams, state: &EnvState, action: &[f64]) -> Result<StepResult> {
    if action.len() != spec.action_dim {
        return Err(Error::Shape(format!(
            "action has {} entries, task expects {}",
            action.len(),
            spec.action_dim
        )));
    }
    let u = action[0].clamp(spec.action_low, spec.action_high);
    let dt = spec.dt;
    let result = match spec.task {
        Task::Pendulum => {
            let (th, om) = (state.0[0], state.0[1]);
            let acc = pendulum_accel(spec, domain, state, u).total();
            let om2 = (om + acc * dt).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
            let th2 = th + om2 * dt;
            let err = angle_normalize(th);
            let reward = -(err * err + 0.1 * om * om + 0.001 * u * u);
            StepResult {
                state: EnvState(vec![th2, om2]),
                reward,
                done: false,
            }
        }
        Task::Cartpole => {
            let [x, xd, th, thd] = [state.0[0], state.0[1], state.0[2], state.0[3]];
            let mc = CART_MASS * domain.mass_scale;
            let mp = POLE_MASS * domain.mass_scale;
            let total = mc + mp;
            let l = POLE_HALF_LENGTH;
            let pml = mp * l;
            let force = u * CART_FORCE + spec.wind_scale * domain.wind - domain.friction_coeff * xd;
            let (s, c) = th.sin_cos();
            let temp = (force + pml * thd * thd * s) / total;
            let th_acc = (domain.gravity * s - c * temp) / (l * (4.0 / 3.0 - mp * c * c / total));
            let x_acc = temp - pml * th_acc * c / total;
            let xd2 = xd + dt * x_acc;
            let x2 = x + dt * xd2;
            let thd2 = thd + dt * th_acc;
            let th2 = th + dt * thd2;
            let done = x2.abs() > CART_X_LIMIT || th2.abs() > POLE_ANGLE_LIMIT;
            StepResult {
                state: EnvState(vec![x2, xd2, th2, thd2]),
                reward: 1.0,
                done,
            }
        }
    };
    if result.state.0.iter().any(|v| !v.is_finite()) || !result.reward.is_finite() {
        return Err(Error::Numeric(format!(
            "{} dynamics produced a non-finite state {:?}",
            spec.task, result.state.0
        )));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_epsilon_is_exact_base() {
        for task in [Task::Pendulum, Task::Cartpole] {
            let cfg = RandomizationConfig::new(task, 0.0);
            let mut r = stream(1, &[1]);
            for _ in 0..100 {
                assert_eq!(sample_domain(&cfg, &mut r).unwrap(), cfg.base);
            }
        }
    }

    #[test]
    fn epsilon_out_of_range_is_config_error() {
        let mut cfg = RandomizationConfig::new(Task::Pendulum, 1.5);
        let err = sample_domain(&cfg, &mut stream(1, &[1])).unwrap_err();
        assert!(err.is_config() && err.to_string().contains("epsilon"));
        cfg.epsilon = -0.1;
        assert!(sample_domain(&cfg, &mut stream(1, &[1])).is_err());
    }

    #[test]
    fn table_bounds_at_specific_epsilons() {
        let mut r = stream(2, &[1]);
        let one = RandomizationConfig::new(Task::Pendulum, 1.0);
        let fifth = RandomizationConfig::new(Task::Pendulum, 0.2);
        for _ in 0..10_000 {
            let d = sample_domain(&one, &mut r).unwrap();
            assert!((0.5..=1.5).contains(&d.mass_scale));
            let d = sample_domain(&fifth, &mut r).unwrap();
            assert!((-1.0..=1.0).contains(&d.wind));
        }
    }

    #[test]
    fn partition_halves_have_correct_sign() {
        let mut r = stream(3, &[1]);
        let neg = RandomizationConfig::new(Task::Cartpole, 0.6).with_partition(Partition::WindNegative);
        let pos = RandomizationConfig::new(Task::Cartpole, 0.6).with_partition(Partition::WindPositive);
        for _ in 0..5_000 {
            assert!(sample_domain(&neg, &mut r).unwrap().wind <= 0.0);
            assert!(sample_domain(&pos, &mut r).unwrap().wind >= 0.0);
        }
    }

    #[test]
    fn reset_without_offset_or_jitter_is_nominal() {
        let mut spec = EnvSpec::pendulum();
        spec.start_jitter = 0.0;
        let s = env_reset(&spec, &spec.nominal, &mut stream(4, &[1]));
        assert_eq!(s, EnvState(vec![PI, 0.0]));
        let a = env_reset(&EnvSpec::cartpole(), &spec.nominal, &mut stream(4, &[2]));
        let b = env_reset(&EnvSpec::cartpole(), &spec.nominal, &mut stream(4, &[2]));
        assert_eq!(a, b);
    }

    #[test]
    fn hanging_pendulum_is_a_fixed_point() {
        let spec = EnvSpec::pendulum();
        let mut d = spec.nominal;
        d.friction_coeff = 0.0;
        let s = EnvState(vec![PI, 0.0]);
        let out = env_step(&spec, &d, &s, &[0.0]).unwrap();
        assert!((out.state.0[0] - PI).abs() <= 1e-12);
        assert!(out.state.0[1].abs() <= 1e-12);
        assert!(!out.done);
    }

    #[test]
    fn gravity_term_is_linear_in_g() {
        let spec = EnvSpec::pendulum();
        let s = EnvState(vec![0.7, 0.3]);
        let d1 = spec.nominal;
        let d2 = DomainParams { gravity: 2.0 * d1.gravity, ..d1 };
        let a1 = pendulum_accel(&spec, &d1, &s, 0.5);
        let a2 = pendulum_accel(&spec, &d2, &s, 0.5);
        assert!((a2.gravity - 2.0 * a1.gravity).abs() < 1e-12);
        assert_eq!(a1.control, a2.control);
    }

    #[test]
    fn step_is_pure_and_clips_actions() {
        let spec = EnvSpec::pendulum();
        let d = DomainParams { wind: 0.4, ..spec.nominal };
        let s = EnvState(vec![0.2, -1.0]);
        let a = env_step(&spec, &d, &s, &[50.0]).unwrap();
        let b = env_step(&spec, &d, &s, &[50.0]).unwrap();
        let c = env_step(&spec, &d, &s, &[2.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn non_finite_state_is_numeric_error() {
        let spec = EnvSpec::cartpole();
        let s = EnvState(vec![0.0, f64::NAN, 0.0, 0.0]);
        assert!(matches!(env_step(&spec, &spec.nominal, &s, &[0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn cartpole_terminates_on_angle() {
        let spec = EnvSpec::cartpole();
        let s = EnvState(vec![0.0, 0.0, 0.25, 0.0]);
        let out = env_step(&spec, &spec.nominal, &s, &[0.0]).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn task_ids_parse() {
        assert_eq!("pendulum".parse::<Task>().unwrap(), Task::Pendulum);
        assert_eq!("cartpole".parse::<Task>().unwrap(), Task::Cartpole);
        assert!("walker".parse::<Task>().unwrap_err().to_string().contains("task"));
    }
}
