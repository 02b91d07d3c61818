use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use p2pdrl::algos::{initial_params, Algorithm};
use p2pdrl::envs::Task;
use p2pdrl::harness::metrics::{read_log, write_eval_csv};
use p2pdrl::harness::run::{compare, evaluate_actors, load_actor, run_training, sweep, train_vs_diversity};
use p2pdrl::harness::{emit_plots, ExperimentConfig, PolicyTag};
use p2pdrl::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Peer-to-peer distillation RL experiments on native control tasks.
///
/// Settings come from the `--config` TOML file (flat keys), then any
/// command-line flag overrides the matching key. Output files are written
/// under `--out` (default: the config's `output_dir`, normally ./results).
#[derive(Debug, Parser)]
#[command(name = "p2pdrl", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed and write metrics, evaluations and checkpoints.
    Train(Common),
    /// Re-evaluate the checkpoints written by `train` at each epsilon_te.
    Eval(Common),
    /// Grid search over learning rate and distillation coefficient.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Learning rates to try.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2])]
        lr_grid: Vec<f64>,
        /// Distillation coefficients to try.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 1.0, 3.0, 10.0])]
        alpha_grid: Vec<f64>,
    },
    /// Training and test return as a function of training diversity. Tests
    /// at the first epsilon_te.
    Diversity {
        #[command(flatten)]
        common: Common,
        /// Training diversities to run.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4, 0.6, 0.8])]
        grid: Vec<f64>,
    },
    /// Train all five algorithms under the same budget and seeds.
    Compare(Common),
    /// Render the learning curve of a finished `train` run.
    Plot(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epsilon_tr: Option<f64>,
    /// Comma-separated test diversities.
    #[arg(long, value_delimiter = ',')]
    epsilon_te: Option<Vec<f64>>,
    /// p2pdrl, ppo, dppo, distral or dnc.
    #[arg(long)]
    algo: Option<String>,
    /// pendulum or cartpole.
    #[arg(long)]
    task: Option<String>,
    /// none or wind_halves.
    #[arg(long)]
    partition: Option<String>,
    /// Experiment name used as the output file prefix.
    #[arg(long)]
    experiment: Option<String>,
    /// Total environment steps per run.
    #[arg(long)]
    total_env_steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
                Error::Io { path, source } => Error::config("config", format!("cannot read {}: {source}", path.display())),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(e) = self.epsilon_tr {
            cfg.epsilon_tr = e;
        }
        if let Some(e) = &self.epsilon_te {
            cfg.epsilon_te = e.clone();
        }
        if let Some(a) = &self.algo {
            cfg.algorithm = a.parse::<Algorithm>()?;
        }
        if let Some(t) = &self.task {
            cfg.task = t.parse::<Task>()?;
        }
        if let Some(p) = &self.partition {
            cfg.partition = p.parse()?;
        }
        if let Some(x) = &self.experiment {
            cfg.experiment = x.clone();
        }
        if let Some(n) = self.total_env_steps {
            cfg.total_env_steps = n;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn eval_checkpoints(cfg: &ExperimentConfig) -> Result<(), Error> {
    let spec = cfg.env_spec();
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let mut actors = Vec::new();
        let mut tags: Vec<PolicyTag> = (0..cfg.workers).map(PolicyTag::Worker).collect();
        tags.push(PolicyTag::Global);
        for tag in tags {
            let path = cfg.output_path(&format!("seed{seed}_{tag}_actor.json"));
            if !path.exists() {
                continue;
            }
            actors.push((tag, load_actor(&path, &initial_params(seed, &spec).0)?));
        }
        if actors.is_empty() {
            return Err(Error::format(
                cfg.output_path(&format!("seed{seed}_0_actor.json")),
                "no checkpoints found for this seed; run `train` first",
            ));
        }
        records.extend(evaluate_actors(&actors.iter().map(|(t, a)| (*t, a)).collect::<Vec<_>>(), cfg, seed)?);
    }
    let path = cfg.output_path("eval.csv");
    write_eval_csv(&path, &records)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn plot(cfg: &ExperimentConfig) -> Result<(), Error> {
    let metrics = cfg.output_path("metrics.csv");
    let log = read_log(&metrics, None)?;
    for p in emit_plots(&log, &cfg.experiment, &cfg.output_dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn report(dir: &Path, name: &str) {
    println!("wrote {}", dir.join(name).display());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let log = run_training(&cfg)?;
            for e in log.evaluations.iter().filter(|e| e.worker_id == PolicyTag::Worker(0) || e.worker_id == PolicyTag::Global) {
                println!(
                    "seed {} policy {} epsilon_te {}: {:.3} +/- {:.3}",
                    e.seed, e.worker_id, e.epsilon_te, e.mean_return, e.stderr
                );
            }
            report(&cfg.output_dir, &format!("{}_metrics.csv", cfg.experiment));
        }
        Command::Eval(c) => eval_checkpoints(&c.resolve()?)?,
        Command::Sweep {
            common,
            lr_grid,
            alpha_grid,
        } => {
            let cfg = common.resolve()?;
            let res = sweep(&cfg, &lr_grid, &alpha_grid)?;
            println!(
                "best: lr={} alpha={} asymptotic return {:.3} +/- {:.3}",
                res.best.lr, res.best.alpha, res.best.asymptotic_return, res.best.stderr
            );
            report(&cfg.output_dir, &format!("{}_sweep.csv", cfg.experiment));
        }
        Command::Diversity { common, grid } => {
            let cfg = common.resolve()?;
            let eps_te = *cfg
                .epsilon_te
                .first()
                .ok_or_else(|| Error::config("epsilon_te", "at least one test diversity is required"))?;
            for r in train_vs_diversity(&cfg, &grid, eps_te)? {
                println!(
                    "epsilon_tr {}: train {:.3} +/- {:.3}, test {:.3} +/- {:.3}",
                    r.epsilon_tr, r.train_return, r.train_stderr, r.test_return, r.test_stderr
                );
            }
            report(&cfg.output_dir, &format!("{}_diversity.csv", cfg.experiment));
        }
        Command::Compare(c) => {
            let cfg = c.resolve()?;
            compare(&cfg)?;
            report(&cfg.output_dir, &format!("{}_compare.csv", cfg.experiment));
        }
        Command::Plot(c) => plot(&c.resolve()?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
