//! Run records, Monte-Carlo aggregation and the global objective.
//!
//! Record files are plain text:
//!
//! ```text
//! #difflearn-record v1
//! #kind=run
//! #fingerprint=3f2a9c0d11e4b7a8
//! #seed=1
//! #agents=4
//! epoch,agent,accuracy,loss,params_sent
//! 0,0,0.0981,2.3051,0
//! ...
//! ```
//!
//! Aggregates use `#kind=aggregate`, a `#repetitions=` line and the columns
//! `epoch,mean_accuracy,std_accuracy`. Reals are written in shortest
//! round-trip form, so reading a file back is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::data::ShardedDataset;
use crate::model::{Mlp, ModelError, ParamVector};
use crate::AgentId;

pub const RECORD_HEADER: &str = "#difflearn-record v1";
const RUN_COLUMNS: &str = "epoch,agent,accuracy,loss,params_sent";
const AGGREGATE_COLUMNS: &str = "epoch,mean_accuracy,std_accuracy";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported record header {0:?}")]
    SchemaVersionMismatch(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("records come from different configurations ({0} vs {1})")]
    FingerprintMismatch(String, String),
    #[error("no records to aggregate")]
    Empty,
    #[error("record has no epochs")]
    NoEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRow {
    pub epoch: usize,
    pub agent: AgentId,
    pub accuracy: f64,
    pub loss: f64,
    /// Parameters this agent has sent since the start of the run.
    pub params_sent: u64,
}

/// Per-epoch, per-agent results of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub fingerprint: String,
    pub seed: u64,
    pub num_agents: usize,
    pub rows: Vec<RecordRow>,
}

impl RunRecord {
    pub fn new(fingerprint: impl Into<String>, seed: u64, num_agents: usize) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            seed,
            num_agents,
            rows: Vec::new(),
        }
    }

    /// Epochs present, ascending.
    pub fn epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self.rows.iter().map(|r| r.epoch).collect();
        e.dedup();
        e
    }

    /// Mean test accuracy over the agents at each recorded epoch.
    pub fn network_mean(&self) -> BTreeMap<usize, f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.accuracy;
            e.1 += 1;
        }
        sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.network_mean().into_values().last()
    }

    /// Total parameters sent by all agents over the run.
    pub fn total_params_sent(&self) -> u64 {
        let last = match self.rows.last() {
            Some(r) => r.epoch,
            None => return 0,
        };
        self.rows
            .iter()
            .filter(|r| r.epoch == last)
            .map(|r| r.params_sent)
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{RECORD_HEADER}\n#kind=run\n#fingerprint={}\n#seed={}\n#agents={}\n{RUN_COLUMNS}\n",
            self.fingerprint, self.seed, self.num_agents
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.agent, r.accuracy, r.loss, r.params_sent
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RecordError> {
        let parsed = Parsed::new(text, "run", RUN_COLUMNS)?;
        let mut record = RunRecord::new(
            parsed.meta("fingerprint")?,
            parsed.meta_num("seed")?,
            parsed.meta_num("agents")?,
        );
        for (line, fields) in parsed.rows {
            let [epoch, agent, accuracy, loss, params_sent] = fields[..] else {
                return Err(malformed(line, "expected 5 columns"));
            };
            record.rows.push(RecordRow {
                epoch: num(line, epoch)?,
                agent: num(line, agent)?,
                accuracy: num(line, accuracy)?,
                loss: num(line, loss)?,
                params_sent: num(line, params_sent)?,
            });
        }
        Ok(record)
    }
}

/// Mean and spread of the network-mean accuracy over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub fingerprint: String,
    pub repetitions: usize,
    pub rows: Vec<AggregateRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub epoch: usize,
    pub mean_accuracy: f64,
    /// Population standard deviation across repetitions.
    pub std_accuracy: f64,
}

impl AggregateRecord {
    pub fn curve(&self) -> BTreeMap<usize, f64> {
        self.rows.iter().map(|r| (r.epoch, r.mean_accuracy)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{RECORD_HEADER}\n#kind=aggregate\n#fingerprint={}\n#repetitions={}\n{AGGREGATE_COLUMNS}\n",
            self.fingerprint, self.repetitions
        );
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.mean_accuracy, r.std_accuracy);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RecordError> {
        let parsed = Parsed::new(text, "aggregate", AGGREGATE_COLUMNS)?;
        let mut rows = Vec::new();
        for (line, fields) in &parsed.rows {
            let [epoch, mean, std] = fields[..] else {
                return Err(malformed(*line, "expected 3 columns"));
            };
            rows.push(AggregateRow {
                epoch: num(*line, epoch)?,
                mean_accuracy: num(*line, mean)?,
                std_accuracy: num(*line, std)?,
            });
        }
        Ok(Self {
            fingerprint: parsed.meta("fingerprint")?,
            repetitions: parsed.meta_num("repetitions")?,
            rows,
        })
    }
}

/// Per-epoch mean and population standard deviation of the network-mean
/// accuracy. All records must share a fingerprint; only epochs present in
/// every record are kept.
pub fn aggregate(records: &[RunRecord]) -> Result<AggregateRecord, RecordError> {
    let first = records.first().ok_or(RecordError::Empty)?;
    if let Some(other) = records.iter().find(|r| r.fingerprint != first.fingerprint) {
        return Err(RecordError::FingerprintMismatch(
            first.fingerprint.clone(),
            other.fingerprint.clone(),
        ));
    }
    let curves: Vec<BTreeMap<usize, f64>> = records.iter().map(RunRecord::network_mean).collect();
    let n = curves.len() as f64;
    let rows = curves[0]
        .keys()
        .filter(|e| curves.iter().all(|c| c.contains_key(e)))
        .map(|&epoch| {
            let values: Vec<f64> = curves.iter().map(|c| c[&epoch]).collect();
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            AggregateRow {
                epoch,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
            }
        })
        .collect();
    Ok(AggregateRecord {
        fingerprint: first.fingerprint.clone(),
        repetitions: records.len(),
        rows,
    })
}

/// `F(w) = sum_k (D_k / D) F_k(w_k)`, where `F_k` is agent `k`'s empirical
/// mean loss on its own shard.
pub fn global_objective(models: &[ParamVector], shards: &ShardedDataset, mlp: &Mlp) -> Result<f64, ModelError> {
    let sizes = shards.shard_sizes();
    let total: usize = sizes.iter().sum();
    let mut objective = 0.0;
    for (k, w) in models.iter().enumerate() {
        let local = mlp.loss(w, shards.samples(k))?;
        objective += sizes[k] as f64 / total as f64 * local;
    }
    Ok(objective)
}

/// Weighted combination used by [`global_objective`], exposed for callers
/// that already hold the per-agent losses.
pub fn weighted_objective(losses: &[f64], sizes: &[usize]) -> f64 {
    let total: usize = sizes.iter().sum();
    losses
        .iter()
        .zip(sizes)
        .map(|(l, &d)| d as f64 / total as f64 * l)
        .sum()
}

/// First epoch whose value reaches `threshold`.
pub fn epochs_to_threshold(curve: &BTreeMap<usize, f64>, threshold: f64) -> Option<usize> {
    curve.iter().find(|(_, &v)| v >= threshold).map(|(&e, _)| e)
}

fn io_error(path: &Path, source: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the whole record, replacing any existing file.
pub fn write_record(record: &RunRecord, path: &Path) -> Result<(), RecordError> {
    std::fs::write(path, record.to_text()).map_err(|e| io_error(path, e))
}

pub fn read_record(path: &Path) -> Result<RunRecord, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    RunRecord::from_text(&text)
}

pub fn write_aggregate(record: &AggregateRecord, path: &Path) -> Result<(), RecordError> {
    std::fs::write(path, record.to_text()).map_err(|e| io_error(path, e))
}

pub fn read_aggregate(path: &Path) -> Result<AggregateRecord, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    AggregateRecord::from_text(&text)
}

/// Either kind of record file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyRecord {
    Run(RunRecord),
    Aggregate(AggregateRecord),
}

impl AnyRecord {
    /// Network-mean accuracy per epoch.
    pub fn curve(&self) -> BTreeMap<usize, f64> {
        match self {
            AnyRecord::Run(r) => r.network_mean(),
            AnyRecord::Aggregate(a) => a.curve(),
        }
    }
}

pub fn read_any(path: &Path) -> Result<AnyRecord, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    match text.lines().nth(1) {
        Some("#kind=aggregate") => AggregateRecord::from_text(&text).map(AnyRecord::Aggregate),
        _ => RunRecord::from_text(&text).map(AnyRecord::Run),
    }
}

fn malformed(line: usize, message: impl Into<String>) -> RecordError {
    RecordError::Malformed {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, RecordError> {
    s.trim()
        .parse()
        .map_err(|_| malformed(line, format!("cannot parse {s:?}")))
}

struct Parsed<'a> {
    meta: BTreeMap<&'a str, &'a str>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Parsed<'a> {
    fn new(text: &'a str, kind: &str, columns: &str) -> Result<Self, RecordError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, RECORD_HEADER)) => {}
            Some((_, other)) => return Err(RecordError::SchemaVersionMismatch(other.to_string())),
            None => return Err(RecordError::SchemaVersionMismatch(String::new())),
        }
        let mut meta = BTreeMap::new();
        let mut rows = Vec::new();
        let mut saw_columns = false;
        for (i, line) in lines {
            let line_no = i + 1;
            if let Some(m) = line.strip_prefix('#') {
                let (k, v) = m
                    .split_once('=')
                    .ok_or_else(|| malformed(line_no, "metadata must be key=value"))?;
                meta.insert(k, v);
            } else if !saw_columns {
                if line != columns {
                    return Err(malformed(line_no, format!("expected columns {columns:?}")));
                }
                saw_columns = true;
            } else if !line.is_empty() {
                rows.push((line_no, line.split(',').collect()));
            }
        }
        match meta.get("kind") {
            Some(&k) if k == kind => {}
            found => {
                return Err(malformed(
                    2,
                    format!("expected a {kind} record, found {:?}", found.copied().unwrap_or("none")),
                ))
            }
        }
        Ok(Self { meta, rows })
    }

    fn meta(&self, key: &str) -> Result<String, RecordError> {
        self.meta
            .get(key)
            .map(|v| v.to_string())
            .ok_or_else(|| malformed(0, format!("missing #{key}")))
    }

    fn meta_num<T: std::str::FromStr>(&self, key: &str) -> Result<T, RecordError> {
        num(0, &self.meta(key)?)
    }
}
