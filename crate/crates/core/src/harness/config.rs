use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algos::{Algorithm, Hyperparams};
use crate::envs::{EnvSpec, PartitionScheme, RandomizationConfig, Task};
use crate::error::{Error, Result};

/// Everything needed to reproduce one experiment. Serialized as a flat TOML
/// document; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prefix for every output file.
    pub experiment: String,
    pub algorithm: Algorithm,
    pub task: Task,
    pub epsilon_tr: f64,
    pub epsilon_te: Vec<f64>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub alpha: f64,
    pub lr: f64,
    pub workers: usize,
    pub steps_per_worker: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
    pub snapshot_per_epoch: bool,
    pub dnc_period: i64,
    pub entropy_coef: f64,
    /// Absent means no value clipping.
    pub value_clip: Option<f64>,
    /// Absent means no gradient clipping.
    pub max_grad_norm: Option<f64>,
    pub normalize_observations: bool,
    pub normalize_rewards: bool,
    pub reward_scale: f64,
    pub total_env_steps: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub partition: PartitionScheme,
    pub resample_per_episode: bool,
    pub stochastic_eval: bool,
    pub output_dir: PathBuf,
}

/// 48 iterations of `2 x 2048` steps: the largest whole number of
/// iterations within 200k environment steps.
pub const DEFAULT_BUDGET: usize = 48 * 4096;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            experiment: "experiment".into(),
            algorithm: Algorithm::P2pdrl,
            task: Task::Pendulum,
            epsilon_tr: 0.2,
            epsilon_te: vec![0.5],
            gamma: hp.gamma,
            gae_lambda: hp.gae_lambda,
            clip_eps: hp.clip_eps,
            alpha: hp.alpha,
            lr: hp.lr,
            workers: hp.workers,
            steps_per_worker: hp.steps_per_worker,
            epochs: hp.epochs,
            minibatch_size: hp.minibatch_size,
            normalize_advantages: hp.normalize_advantages,
            snapshot_per_epoch: hp.snapshot_per_epoch,
            dnc_period: hp.dnc_period.map_or(0, |p| p as i64),
            entropy_coef: hp.entropy_coef,
            value_clip: hp.value_clip,
            max_grad_norm: hp.max_grad_norm,
            normalize_observations: hp.normalize_observations,
            normalize_rewards: hp.normalize_rewards,
            reward_scale: hp.reward_scale,
            total_env_steps: DEFAULT_BUDGET,
            seeds: (0..8).collect(),
            eval_episodes: 20,
            partition: PartitionScheme::None,
            resample_per_episode: false,
            stochastic_eval: false,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn check_epsilon(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} is outside [0, 1]")))
    }
}

impl ExperimentConfig {
    /// Parse a config document. `origin` names the source in error messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // Pull the offending key out of "unknown field `x`" style messages.
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .map(str::to_string)
                .or_else(|| e.span().map(|s| text[s].split('=').next().unwrap_or("").trim().to_string()))
                .filter(|k| !k.is_empty())
                .unwrap_or_else(|| origin.to_string());
            Error::config(key, format!("{origin}: {msg}"))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip_eps: self.clip_eps,
            alpha: self.alpha,
            lr: self.lr,
            workers: self.workers,
            steps_per_worker: self.steps_per_worker,
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            normalize_advantages: self.normalize_advantages,
            snapshot_per_epoch: self.snapshot_per_epoch,
            dnc_period: usize::try_from(self.dnc_period).ok().filter(|&p| p > 0),
            entropy_coef: self.entropy_coef,
            value_clip: self.value_clip,
            max_grad_norm: self.max_grad_norm,
            normalize_observations: self.normalize_observations,
            normalize_rewards: self.normalize_rewards,
            reward_scale: self.reward_scale,
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::for_task(self.task)
    }

    pub fn randomization(&self) -> RandomizationConfig {
        let mut r = RandomizationConfig::new(self.task, self.epsilon_tr);
        r.resample_per_episode = self.resample_per_episode;
        r
    }

    pub fn iterations(&self) -> usize {
        self.total_env_steps / (self.workers * self.steps_per_worker)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return Err(Error::config("experiment", "must be a non-empty name without path separators"));
        }
        check_epsilon("epsilon_tr", self.epsilon_tr)?;
        for &e in &self.epsilon_te {
            check_epsilon("epsilon_te", e)?;
        }
        if self.dnc_period <= 0 {
            return Err(Error::config("dnc_period", format!("{} must be a positive number of iterations", self.dnc_period)));
        }
        self.hyperparams().validate()?;
        let per_iter = self.workers * self.steps_per_worker;
        if self.total_env_steps == 0 || self.total_env_steps % per_iter != 0 {
            return Err(Error::config(
                "total_env_steps",
                format!(
                    "{} is not a positive multiple of workers * steps_per_worker = {per_iter}",
                    self.total_env_steps
                ),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.output_dir.join(format!("{}_{suffix}", self.experiment))
    }
}
