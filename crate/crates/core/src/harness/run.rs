//! Training orchestration: single experiments, diversity curves, sweeps and
//! the five-algorithm comparison.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::algos::{Algorithm, Trainer};
use crate::error::{Error, Result};
use crate::numerics::Checkpoint;
use crate::policy::ActorParams;
use crate::rng::{stream, Stream};

use super::config::ExperimentConfig;
use super::eval::evaluate_episodes;
use super::metrics::{
    asymptotic_return, mean_stderr, CsvSink, EvalRecord, IterationRecord, MetricsLog, PolicyTag, EVAL_HEADER, METRICS_HEADER,
};
use super::plot::{render_svg, PlotSpec, Series};

/// Checkpoint section holding an actor's observation normalizer.
pub const OBS_NORM_SECTION: &str = "obs_norm";

/// Rebuild an actor saved by a training run. `template` supplies the layout.
pub fn load_actor(path: &std::path::Path, template: &ActorParams) -> Result<ActorParams> {
    let ck = Checkpoint::load(path)?;
    let mut actor = template.clone();
    ck.restore("actor", &mut actor)?;
    actor.obs_norm = None;
    if ck.sections.contains_key(OBS_NORM_SECTION) {
        let d = actor.state_dim();
        let mut norm = crate::policy::ObsNorm {
            mean: crate::numerics::Tensor::zeros(&[d]),
            std: crate::numerics::Tensor::zeros(&[d]),
        };
        ck.restore(OBS_NORM_SECTION, &mut norm)?;
        actor.obs_norm = Some(norm);
    }
    Ok(actor)
}

/// Random stream for evaluating any policy of run `seed` at `epsilon_te`.
/// Every policy of a run faces the same evaluation domains.
pub fn eval_stream(seed: u64, epsilon_te: f64) -> crate::rng::Rng {
    stream(seed, &[Stream::Eval as u64, epsilon_te.to_bits()])
}

/// The policy whose evaluation is reported as the algorithm's result.
pub fn headline_tag(algorithm: Algorithm) -> PolicyTag {
    match algorithm {
        Algorithm::Distral | Algorithm::Dnc => PolicyTag::Global,
        _ => PolicyTag::Worker(0),
    }
}

fn tagged_actors(trainer: &Trainer) -> Vec<(PolicyTag, &ActorParams)> {
    let mut out: Vec<(PolicyTag, &ActorParams)> = trainer
        .worker_actors()
        .into_iter()
        .enumerate()
        .map(|(i, a)| (PolicyTag::Worker(i), a))
        .collect();
    if let Some(g) = trainer.global_actor() {
        out.push((PolicyTag::Global, g));
    }
    out
}

fn ensure_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

/// Evaluate tagged policies of run `seed` at each `epsilon_te`. With more
/// than one worker policy a `mean` row is added: per-episode returns
/// averaged over the workers.
pub fn evaluate_actors(actors: &[(PolicyTag, &ActorParams)], cfg: &ExperimentConfig, seed: u64) -> Result<Vec<EvalRecord>> {
    let spec = cfg.env_spec();
    let mut out = Vec::new();
    for &eps in &cfg.epsilon_te {
        let mut worker_returns: Vec<Vec<f64>> = Vec::new();
        for (tag, actor) in actors {
            let mut rng = eval_stream(seed, eps);
            let returns = evaluate_episodes(actor, &spec, eps, cfg.eval_episodes, cfg.stochastic_eval, &mut rng)?;
            let (mean_return, stderr) = mean_stderr(&returns);
            out.push(EvalRecord {
                epsilon_te: eps,
                seed,
                worker_id: *tag,
                mean_return,
                stderr,
            });
            if matches!(tag, PolicyTag::Worker(_)) {
                worker_returns.push(returns);
            }
        }
        if worker_returns.len() > 1 {
            let avg: Vec<f64> = (0..cfg.eval_episodes)
                .map(|e| worker_returns.iter().map(|r| r[e]).sum::<f64>() / worker_returns.len() as f64)
                .collect();
            let (mean_return, stderr) = mean_stderr(&avg);
            out.push(EvalRecord {
                epsilon_te: eps,
                seed,
                worker_id: PolicyTag::Mean,
                mean_return,
                stderr,
            });
        }
    }
    Ok(out)
}

/// Evaluate every policy held by a trainer.
pub fn evaluate_trainer(trainer: &Trainer, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<EvalRecord>> {
    evaluate_actors(&tagged_actors(trainer), cfg, seed)
}

/// Train one seed to the configured budget, passing every iteration's
/// records to `on_iteration`. Returns the trained state.
pub fn train_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&Trainer, &[IterationRecord]) -> Result<()>,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(
        cfg.algorithm,
        cfg.env_spec(),
        cfg.hyperparams(),
        cfg.randomization(),
        cfg.partition,
        seed,
    )?;
    for _ in 0..cfg.iterations() {
        let m = trainer.iterate()?;
        let records: Vec<IterationRecord> = m
            .workers
            .iter()
            .map(|w| IterationRecord {
                iteration: trainer.iteration(),
                env_steps: trainer.env_steps(),
                seed,
                worker_id: w.worker_id,
                mean_episode_return: w.mean_episode_return,
                ppo_loss: w.ppo_loss,
                distill_loss: w.distill_loss,
                value_loss: w.value_loss,
                grad_variance_log: w.grad_variance_log,
            })
            .collect();
        on_iteration(&trainer, &records)?;
    }
    Ok(trainer)
}

fn save_checkpoints(trainer: &Trainer, cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    for (tag, actor) in tagged_actors(trainer) {
        let mut ck = Checkpoint::new();
        ck.insert("actor", actor);
        if let Some(norm) = &actor.obs_norm {
            ck.insert(OBS_NORM_SECTION, norm);
        }
        ck.save(&cfg.output_path(&format!("seed{seed}_{tag}_actor.json")))?;
    }
    Ok(())
}

/// Run every seed to the budget. Writes `<experiment>_metrics.csv` (flushed
/// after every iteration), `<experiment>_eval.csv`, the resolved config and
/// per-policy actor checkpoints into the output directory.
pub fn run_training(cfg: &ExperimentConfig) -> Result<MetricsLog> {
    cfg.validate()?;
    ensure_dir(cfg)?;
    let config_path = cfg.output_path("config.toml");
    fs::write(&config_path, cfg.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;

    let mut metrics = CsvSink::create(&cfg.output_path("metrics.csv"), METRICS_HEADER)?;
    let mut log = MetricsLog::default();
    for &seed in &cfg.seeds {
        let trainer = train_seed(cfg, seed, |_, records| {
            for r in records {
                metrics.append(&r.to_csv_line())?;
            }
            log.iterations.extend_from_slice(records);
            Ok(())
        })?;
        log.evaluations.extend(evaluate_trainer(&trainer, cfg, seed)?);
        save_checkpoints(&trainer, cfg, seed)?;
    }
    let mut eval = CsvSink::create(&cfg.output_path("eval.csv"), EVAL_HEADER)?;
    for r in &log.evaluations {
        eval.append(&r.to_csv_line())?;
    }
    Ok(log)
}

/// Per-seed asymptotic training return and headline test return of a log.
pub fn seed_summaries(log: &MetricsLog, algorithm: Algorithm, epsilon_te: f64) -> Vec<(u64, f64, f64)> {
    let tag = headline_tag(algorithm);
    log.seeds()
        .into_iter()
        .map(|seed| {
            let train = asymptotic_return(&log.for_seed(seed));
            let test = log
                .evaluations
                .iter()
                .find(|e| e.seed == seed && e.worker_id == tag && e.epsilon_te == epsilon_te)
                .map_or(f64::NAN, |e| e.mean_return);
            (seed, train, test)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityRow {
    pub epsilon_tr: f64,
    pub train_return: f64,
    pub train_stderr: f64,
    pub test_return: f64,
    pub test_stderr: f64,
    /// Per-seed `(seed, asymptotic training return, test return)`.
    pub per_seed: Vec<(u64, f64, f64)>,
}

pub const DIVERSITY_HEADER: &str = "epsilon_tr,train_return,train_stderr,test_return,test_stderr";

/// Label used in file names for a grid value.
pub fn grid_label(v: f64) -> String {
    format!("{v}").replace('-', "m")
}

/// Train at every `epsilon_tr` in `grid` and test the headline policy at the
/// fixed `epsilon_te`. Each grid cell writes its own experiment files
/// (`<experiment>_eps<value>_*`); the curve goes to
/// `<experiment>_diversity.csv` and `<experiment>_diversity.svg`.
pub fn train_vs_diversity(cfg: &ExperimentConfig, grid: &[f64], epsilon_te: f64) -> Result<Vec<DiversityRow>> {
    if grid.is_empty() {
        return Err(Error::config("epsilon_tr", "diversity grid is empty"));
    }
    let cells: Vec<ExperimentConfig> = grid
        .iter()
        .map(|&eps| {
            let mut c = cfg.clone();
            c.epsilon_tr = eps;
            c.epsilon_te = vec![epsilon_te];
            c.experiment = format!("{}_eps{}", cfg.experiment, grid_label(eps));
            c
        })
        .collect();
    for c in &cells {
        c.validate()?;
    }
    ensure_dir(cfg)?;
    let logs: Vec<MetricsLog> = cells.par_iter().map(run_training).collect::<Result<_>>()?;

    let rows: Vec<DiversityRow> = grid
        .iter()
        .zip(&logs)
        .map(|(&eps, log)| {
            let per_seed = seed_summaries(log, cfg.algorithm, epsilon_te);
            let train: Vec<f64> = per_seed.iter().map(|s| s.1).collect();
            let test: Vec<f64> = per_seed.iter().map(|s| s.2).collect();
            let (train_return, train_stderr) = mean_stderr(&train);
            let (test_return, test_stderr) = mean_stderr(&test);
            DiversityRow {
                epsilon_tr: eps,
                train_return,
                train_stderr,
                test_return,
                test_stderr,
                per_seed,
            }
        })
        .collect();

    let mut sink = CsvSink::create(&cfg.output_path("diversity.csv"), DIVERSITY_HEADER)?;
    for r in &rows {
        sink.append(&format!(
            "{},{},{},{},{}",
            r.epsilon_tr, r.train_return, r.train_stderr, r.test_return, r.test_stderr
        ))?;
    }
    let series = vec![
        Series {
            label: "train".into(),
            points: rows.iter().map(|r| (r.epsilon_tr, r.train_return, r.train_stderr)).collect(),
        },
        Series {
            label: format!("test (eps_te={epsilon_te})"),
            points: rows.iter().map(|r| (r.epsilon_tr, r.test_return, r.test_stderr)).collect(),
        },
    ];
    let spec = PlotSpec {
        title: format!("{}: return vs training diversity", cfg.algorithm),
        x_label: "epsilon_tr".into(),
        y_label: "return".into(),
    };
    let svg = render_svg(&series, &spec)?;
    let path = cfg.output_path("diversity.svg");
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lr: f64,
    pub alpha: f64,
    pub asymptotic_return: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best: SweepRow,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "lr,alpha,asymptotic_return,stderr";

/// Highest mean asymptotic return; ties go to the lower lr, then the lower
/// alpha.
pub fn best_row(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter().min_by(|a, b| {
        b.asymptotic_return
            .total_cmp(&a.asymptotic_return)
            .then(a.lr.total_cmp(&b.lr))
            .then(a.alpha.total_cmp(&b.alpha))
    })
}

/// Train every `(lr, alpha)` cell over all seeds and pick the best cell by
/// mean asymptotic training return. Writes `<experiment>_sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, lr_grid: &[f64], alpha_grid: &[f64]) -> Result<SweepResult> {
    if lr_grid.is_empty() {
        return Err(Error::config("lr", "sweep grid is empty"));
    }
    if alpha_grid.is_empty() {
        return Err(Error::config("alpha", "sweep grid is empty"));
    }
    let cells: Vec<ExperimentConfig> = lr_grid
        .iter()
        .flat_map(|&lr| alpha_grid.iter().map(move |&alpha| (lr, alpha)))
        .map(|(lr, alpha)| {
            let mut c = cfg.clone();
            c.lr = lr;
            c.alpha = alpha;
            c.experiment = format!("{}_lr{}_alpha{}", cfg.experiment, grid_label(lr), grid_label(alpha));
            c
        })
        .collect();
    for c in &cells {
        c.validate()?;
    }
    ensure_dir(cfg)?;
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|c| {
            let log = run_training(c)?;
            let per_seed: Vec<f64> = log.seeds().into_iter().map(|s| asymptotic_return(&log.for_seed(s))).collect();
            let (asymptotic_return, stderr) = mean_stderr(&per_seed);
            Ok(SweepRow {
                lr: c.lr,
                alpha: c.alpha,
                asymptotic_return,
                stderr,
            })
        })
        .collect::<Result<_>>()?;
    let mut sink = CsvSink::create(&cfg.output_path("sweep.csv"), SWEEP_HEADER)?;
    for r in &rows {
        sink.append(&format!("{},{},{},{}", r.lr, r.alpha, r.asymptotic_return, r.stderr))?;
    }
    let best = best_row(&rows).expect("non-empty grid").clone();
    Ok(SweepResult { best, rows })
}

pub const COMPARE_LABEL: &str = "algorithm";

/// Train all five algorithms under the same budget and seeds. Writes the
/// joint `<experiment>_compare.csv` (metrics columns prefixed by
/// `algorithm`), `<experiment>_compare_eval.csv` and an overlay of the
/// learning curves in `<experiment>_compare.svg`.
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<(Algorithm, MetricsLog)>> {
    cfg.validate()?;
    ensure_dir(cfg)?;
    let runs: Vec<(Algorithm, MetricsLog)> = Algorithm::ALL
        .par_iter()
        .map(|&algo| {
            let mut c = cfg.clone();
            c.algorithm = algo;
            c.experiment = format!("{}_{}", cfg.experiment, algo);
            run_training(&c).map(|log| (algo, log))
        })
        .collect::<Result<_>>()?;

    let mut sink = CsvSink::create(&cfg.output_path("compare.csv"), &format!("{COMPARE_LABEL},{METRICS_HEADER}"))?;
    for (algo, log) in &runs {
        for r in &log.iterations {
            sink.append(&format!("{algo},{}", r.to_csv_line()))?;
        }
    }
    let mut eval = CsvSink::create(&cfg.output_path("compare_eval.csv"), &format!("{COMPARE_LABEL},{EVAL_HEADER}"))?;
    for (algo, log) in &runs {
        for r in &log.evaluations {
            eval.append(&format!("{algo},{}", r.to_csv_line()))?;
        }
    }
    let series: Vec<Series> = runs
        .iter()
        .map(|(algo, log)| Series::learning_curve(algo.as_str(), &log.iterations))
        .collect();
    let spec = PlotSpec {
        title: format!("{}: learning curves", cfg.task),
        x_label: "environment steps".into(),
        y_label: "mean episode return".into(),
    };
    let path: PathBuf = cfg.output_path("compare.svg");
    fs::write(&path, render_svg(&series, &spec)?).map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}
