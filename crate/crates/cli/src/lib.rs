//! Library half of the `difflearn` binary: argument resolution, presets,
//! and the `run` / `compare` commands.

pub mod args;
pub mod presets;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use difflearn::config::{ConfigError, DataSpec};
use difflearn::data::{DataError, LabeledDataset};
use difflearn::engine::RunAborted;
use difflearn::experiment::load_data;
use difflearn::metrics::{aggregate, epochs_to_threshold, read_any, write_aggregate, write_record, RecordError};
use difflearn::{Execution, RunConfig, RunOptions, RunRecord};
use thiserror::Error;

pub use args::{Cli, Command, CompareArgs, RunArgs};

/// Fallback for `--data`.
pub const DATA_ENV: &str = "DIFFLEARN_DATA";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown preset {name:?}; available presets: {}", available.join(", "))]
    UnknownPreset { name: String, available: Vec<&'static str> },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("reading config file {path}: {message}")]
    ConfigFile { path: String, message: String },
    #[error(
        "no training data: {0}. Download the four uncompressed MNIST IDX files \
         (train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, \
         t10k-labels-idx1-ubyte) into a directory and pass --data <dir> or set {DATA_ENV}, \
         or use --data synthetic"
    )]
    MissingData(String),
    #[error("loading data: {0}")]
    Data(#[from] DataError),
    #[error("run with seed {seed} failed: {source}")]
    Run { seed: u64, source: Box<RunAborted> },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Overlays `top` onto `base`, merging nested tables key by key.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolves preset, config file and flags (in increasing precedence) into a
/// validated config. `env_data` stands in for `$DIFFLEARN_DATA` and is used
/// only when no other source names the data.
pub fn parse_config(args: &RunArgs, env_data: Option<&str>) -> Result<RunConfig, CliError> {
    let mut config = match &args.preset {
        Some(name) => presets::find(name)
            .ok_or_else(|| CliError::UnknownPreset {
                name: name.clone(),
                available: presets::names(),
            })?
            .config,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        let file_err = |message: String| CliError::ConfigFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let top: toml::Table = toml::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let mut table = toml::Table::try_from(&config).expect("run config serialises to a table");
        merge(&mut table, top);
        config = table.try_into().map_err(|e: toml::de::Error| file_err(e.to_string()))?;
    }

    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = &args.$flag { $field = v.clone(); })*
        };
    }
    set! {
        seed => config.seed,
        algorithm => config.algorithm,
        rule => config.rule,
        epochs => config.epochs,
        rounds => config.rounds_per_epoch,
        batch_size => config.batch_size,
        mu => config.mu,
        gombertz_a => config.gombertz_a,
        topology => config.topology,
        shard_size => config.partition.shard_size,
        noniid => config.partition.noniid,
        classes => config.partition.classes,
        hidden => config.hidden,
    }
    if let Some(d) = &args.data {
        config.data = Some(d.clone());
    }
    if let Some(n) = args.local_batches {
        config.local_batches_per_round = Some(n);
    }
    if let Some(n) = args.eval_subset {
        config.eval_subset = Some(n);
    }
    if config.data.is_none() {
        if let Some(dir) = env_data.filter(|d| !d.is_empty()) {
            config.data = Some(dir.parse()?);
        }
    }
    config.validate()?;
    Ok(config)
}

/// Repetition count: the flag, else the preset's count, else 1.
pub fn repetitions(args: &RunArgs) -> usize {
    args.reps
        .or_else(|| args.preset.as_deref().and_then(presets::find).map(|p| p.repetitions))
        .unwrap_or(1)
}

pub fn load(config: &RunConfig) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    let spec = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::MissingData(format!("neither --data nor {DATA_ENV} is set")))?;
    load_data(spec).map_err(|e| match (e, spec) {
        (DataError::MissingFile(f), DataSpec::Mnist(_)) => CliError::MissingData(format!("{f} not found")),
        (e, _) => e.into(),
    })
}

/// Files written by [`run_repetitions`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub records: Vec<PathBuf>,
    pub sidecars: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub summary: String,
}

fn map_seeds<F>(seeds: Vec<u64>, sequential: bool, f: F) -> Vec<Result<RunRecord, CliError>>
where
    F: Fn(u64) -> Result<RunRecord, CliError> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !sequential {
        use rayon::prelude::*;
        return seeds.into_par_iter().map(f).collect();
    }
    let _ = sequential;
    seeds.into_iter().map(f).collect()
}

/// Runs `reps` repetitions with seeds `config.seed + i` and writes, under
/// `out`, one record and one TOML sidecar per repetition plus the
/// aggregate.
pub fn run_repetitions(
    config: &RunConfig,
    reps: usize,
    out: &Path,
    stem: &str,
    args: &RunArgs,
) -> Result<RunOutputs, CliError> {
    if reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let (train, test) = load(config)?;
    let train = Arc::new(train);
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let seeds: Vec<u64> = (0..reps as u64)
        .map(|i| config.seed.checked_add(i).filter(|s| *s <= i64::MAX as u64))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Usage("seed + repetitions exceeds the seed range".into()))?;
    let options = RunOptions {
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        checkpoint_dir: None,
    };

    let results = map_seeds(seeds.clone(), args.sequential, |seed| {
        let config = RunConfig {
            seed,
            ..config.clone()
        };
        let mut options = options.clone();
        if let Some(dir) = &args.checkpoint_dir {
            let dir = dir.join(format!("{stem}_{}_seed{seed}", config.variant()));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            options.checkpoint_dir = Some(dir);
        }
        difflearn::experiment::run(&config, train.clone(), &test, &options).map_err(|e| CliError::Run {
            seed,
            source: Box::new(e),
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let variant = config.variant();
    let mut outputs = RunOutputs {
        records: Vec::new(),
        sidecars: Vec::new(),
        aggregate: out.join(format!("{stem}_{variant}_aggregate.csv")),
        summary: String::new(),
    };
    for (record, &seed) in records.iter().zip(&seeds) {
        let path = out.join(format!("{stem}_{variant}_seed{seed}.csv"));
        write_record(record, &path)?;
        let sidecar = path.with_extension("toml");
        let seeded = RunConfig {
            seed,
            ..config.clone()
        };
        std::fs::write(&sidecar, seeded.to_toml()).map_err(io_err(&sidecar))?;
        let curve = record.network_mean();
        let _ = writeln!(
            outputs.summary,
            "seed {seed}: final accuracy {:.4}, epochs to {}: {}  -> {}",
            record.final_accuracy().unwrap_or(f64::NAN),
            args.threshold,
            fmt_epochs(epochs_to_threshold(&curve, args.threshold)),
            path.display()
        );
        outputs.records.push(path);
        outputs.sidecars.push(sidecar);
    }
    let agg = aggregate(&records)?;
    write_aggregate(&agg, &outputs.aggregate)?;
    let curve = agg.curve();
    let _ = writeln!(
        outputs.summary,
        "aggregate over {reps}: final mean accuracy {:.4}, epochs to {}: {}  -> {}",
        curve.values().last().copied().unwrap_or(f64::NAN),
        args.threshold,
        fmt_epochs(epochs_to_threshold(&curve, args.threshold)),
        outputs.aggregate.display()
    );
    Ok(outputs)
}

fn fmt_epochs(e: Option<usize>) -> String {
    e.map_or_else(|| "never".to_string(), |e| e.to_string())
}

/// `run`: resolve, execute, write. Returns the human summary.
pub fn run_command(args: &RunArgs, env_data: Option<&str>) -> Result<String, CliError> {
    let config = parse_config(args, env_data)?;
    if args.print_config {
        return Ok(config.to_toml());
    }
    let stem = args
        .name
        .clone()
        .or_else(|| args.preset.clone())
        .unwrap_or_else(|| "run".into());
    let outputs = run_repetitions(&config, repetitions(args), &args.out, &stem, args)?;
    Ok(outputs.summary)
}

/// Side-by-side comparison table and any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub table: String,
    pub warnings: Vec<String>,
}

/// `compare`: epochs-to-threshold and final accuracy over the epochs all
/// records share.
pub fn compare(paths: &[PathBuf], threshold: f64) -> Result<Comparison, CliError> {
    if paths.len() < 2 {
        return Err(CliError::Usage("compare needs at least two record files".into()));
    }
    let curves = paths
        .iter()
        .map(|p| read_any(p).map(|r| r.curve()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut shared: BTreeSet<usize> = curves[0].keys().copied().collect();
    for c in &curves[1..] {
        shared.retain(|e| c.contains_key(e));
    }
    let mut warnings = Vec::new();
    if shared.is_empty() {
        return Err(CliError::Usage("the records share no epochs".into()));
    }
    if curves.iter().any(|c| c.len() != shared.len()) {
        warnings.push(format!(
            "epoch ranges differ; comparing over epochs {}..={} only",
            shared.first().unwrap(),
            shared.last().unwrap()
        ));
    }
    let last = *shared.last().expect("non-empty");
    let width = paths.iter().map(|p| p.display().to_string().len()).max().unwrap_or(6).max(6);
    let mut table = format!("{:<width$}  {:>14}  {:>14}\n", "record", format!("epochs to {threshold}"), "final accuracy");
    for (p, c) in paths.iter().zip(&curves) {
        let clipped: BTreeMap<usize, f64> = c.iter().filter(|(e, _)| shared.contains(e)).map(|(&e, &v)| (e, v)).collect();
        let _ = writeln!(
            table,
            "{:<width$}  {:>14}  {:>14.4}",
            p.display(),
            fmt_epochs(epochs_to_threshold(&clipped, threshold)),
            clipped[&last]
        );
    }
    Ok(Comparison { table, warnings })
}

pub fn presets_listing() -> String {
    let mut s = String::new();
    for p in presets::registry() {
        let _ = writeln!(s, "{:<20} {:>3} reps  {}", p.name, p.repetitions, p.summary);
    }
    s
}
