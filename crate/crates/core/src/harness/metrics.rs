//! Metrics records and their CSV encodings.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "iteration,env_steps,seed,worker_id,mean_episode_return,ppo_loss,distill_loss,value_loss,grad_variance_log";
pub const EVAL_HEADER: &str = "epsilon_te,seed,worker_id,mean_return,stderr";

/// One worker's training summary after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration index within a seed.
    pub iteration: usize,
    /// Cumulative environment steps after this iteration.
    pub env_steps: usize,
    pub seed: u64,
    pub worker_id: usize,
    pub mean_episode_return: f64,
    pub ppo_loss: f64,
    pub distill_loss: f64,
    pub value_loss: f64,
    pub grad_variance_log: f64,
}

/// Which policy an evaluation row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyTag {
    Worker(usize),
    /// Episode-wise average over all workers.
    Mean,
    /// The global policy of Distral / DnC.
    Global,
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyTag::Worker(i) => write!(f, "{i}"),
            PolicyTag::Mean => f.write_str("mean"),
            PolicyTag::Global => f.write_str("global"),
        }
    }
}

impl FromStr for PolicyTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(PolicyTag::Mean),
            "global" => Ok(PolicyTag::Global),
            other => other
                .parse()
                .map(PolicyTag::Worker)
                .map_err(|_| format!("invalid worker_id {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub epsilon_te: f64,
    pub seed: u64,
    pub worker_id: PolicyTag,
    pub mean_return: f64,
    /// Sample standard deviation over episodes divided by `sqrt(M)`.
    pub stderr: f64,
}

/// Append-only training and evaluation records of an experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub iterations: Vec<IterationRecord>,
    pub evaluations: Vec<EvalRecord>,
}

impl MetricsLog {
    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.iterations {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out
    }

    pub fn for_seed(&self, seed: u64) -> Vec<&IterationRecord> {
        self.iterations.iter().filter(|r| r.seed == seed).collect()
    }
}

impl IterationRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.seed,
            self.worker_id,
            self.mean_episode_return,
            self.ppo_loss,
            self.distill_loss,
            self.value_loss,
            self.grad_variance_log
        )
    }
}

impl EvalRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epsilon_te, self.seed, self.worker_id, self.mean_return, self.stderr
        )
    }
}

/// CSV file that is appended to and flushed row by row.
pub struct CsvSink {
    path: PathBuf,
    file: File,
}

impl CsvSink {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn write_metrics_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut sink = CsvSink::create(path, METRICS_HEADER)?;
    for r in records {
        sink.append(&r.to_csv_line())?;
    }
    Ok(())
}

pub fn write_eval_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut sink = CsvSink::create(path, EVAL_HEADER)?;
    for r in records {
        sink.append(&r.to_csv_line())?;
    }
    Ok(())
}

fn field<T: FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::format(path, format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| Error::format(path, format!("invalid {name} value {raw:?}")))
}

fn open_csv(path: &Path, header: &str, offset: usize) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let got = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .skip(offset)
        .collect::<Vec<_>>()
        .join(",");
    if got != header {
        return Err(Error::format(path, format!("unexpected header {got:?}")));
    }
    Ok(rdr)
}

pub(crate) fn parse_iteration(path: &Path, rec: &csv::StringRecord, o: usize) -> Result<IterationRecord> {
    Ok(IterationRecord {
        iteration: field(path, rec, o, "iteration")?,
        env_steps: field(path, rec, o + 1, "env_steps")?,
        seed: field(path, rec, o + 2, "seed")?,
        worker_id: field(path, rec, o + 3, "worker_id")?,
        mean_episode_return: field(path, rec, o + 4, "mean_episode_return")?,
        ppo_loss: field(path, rec, o + 5, "ppo_loss")?,
        distill_loss: field(path, rec, o + 6, "distill_loss")?,
        value_loss: field(path, rec, o + 7, "value_loss")?,
        grad_variance_log: field(path, rec, o + 8, "grad_variance_log")?,
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut rdr = open_csv(path, METRICS_HEADER, 0)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            parse_iteration(path, &rec, 0)
        })
        .collect()
}

/// Read a joint comparison CSV: an `algorithm` column followed by the
/// metrics columns.
pub fn read_labelled_metrics_csv(path: &Path) -> Result<Vec<(String, IterationRecord)>> {
    let mut rdr = open_csv(path, METRICS_HEADER, 1)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let label = rec.get(0).unwrap_or_default().to_string();
            Ok((label, parse_iteration(path, &rec, 1)?))
        })
        .collect()
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = open_csv(path, EVAL_HEADER, 0)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            Ok(EvalRecord {
                epsilon_te: field(path, &rec, 0, "epsilon_te")?,
                seed: field(path, &rec, 1, "seed")?,
                worker_id: field(path, &rec, 2, "worker_id")?,
                mean_return: field(path, &rec, 3, "mean_return")?,
                stderr: field(path, &rec, 4, "stderr")?,
            })
        })
        .collect()
}

/// Read both CSVs of an experiment into one log.
pub fn read_log(metrics: &Path, eval: Option<&Path>) -> Result<MetricsLog> {
    Ok(MetricsLog {
        iterations: read_metrics_csv(metrics)?,
        evaluations: match eval {
            Some(p) => read_eval_csv(p)?,
            None => Vec::new(),
        },
    })
}

/// Mean of `xs` and its standard error `std / sqrt(n)` (sample std, zero
/// for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean training return over the final 10% of iterations (at least one),
/// where each iteration's return is averaged over its workers.
pub fn asymptotic_return(records: &[&IterationRecord]) -> f64 {
    let mut per_iter: Vec<(usize, f64, usize)> = Vec::new();
    for r in records {
        match per_iter.iter_mut().find(|(i, _, _)| *i == r.iteration) {
            Some(e) => {
                e.1 += r.mean_episode_return;
                e.2 += 1;
            }
            None => per_iter.push((r.iteration, r.mean_episode_return, 1)),
        }
    }
    per_iter.sort_by_key(|e| e.0);
    let n = per_iter.len();
    if n == 0 {
        return f64::NAN;
    }
    let window = n.div_ceil(10).max(1);
    per_iter[n - window..].iter().map(|(_, s, c)| s / *c as f64).sum::<f64>() / window as f64
}
