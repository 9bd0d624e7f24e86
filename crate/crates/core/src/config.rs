//! Run configuration and its textual forms.
//!
//! Compound fields (topology, data source, non-IID selection, class count)
//! serialise as short strings such as `rgg:20:0.35` or
//! `synthetic:train=4000,classes=10` so the same syntax works in TOML files
//! and on the command line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::AgentId;

#[derive(Debug, Error, PartialEq)]
#[error("invalid value for `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Adapt, then combine over `N_k` (self included).
    Diffusion,
    /// Adapt, then combine over `N_k` without `k`.
    Consensus,
    /// One model trained on the union of all shards.
    Centralized,
    /// Every agent trains alone; nothing is exchanged.
    Isolated,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Diffusion,
        Algorithm::Consensus,
        Algorithm::Centralized,
        Algorithm::Isolated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Diffusion => "diffusion",
            Algorithm::Consensus => "consensus",
            Algorithm::Centralized => "centralized",
            Algorithm::Isolated => "isolated",
        }
    }

    pub fn combines(self) -> bool {
        matches!(self, Algorithm::Diffusion | Algorithm::Consensus)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ConfigError::new("algorithm", format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Constant,
    Adaptive,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Constant => "constant",
            Rule::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Rule::Constant),
            "adaptive" => Ok(Rule::Adaptive),
            _ => Err(ConfigError::new("rule", format!("unknown rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Every agent starts from the same parameters.
    #[default]
    Shared,
    /// Each agent draws its own initial parameters.
    Divergent,
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl TryFrom<String> for $ty {
            type Error = ConfigError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$ty> for String {
            fn from(v: $ty) -> String {
                v.to_string()
            }
        }
    };
}

/// Where the agent graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TopologySpec {
    Line(usize),
    Complete(usize),
    /// Random geometric graph: agent count and connection radius. The
    /// placement seed comes from the run's topology stream.
    RandomGeometric { agents: usize, radius: f64 },
    EdgeList(PathBuf),
}

impl TopologySpec {
    /// Agent count when known without reading a file.
    pub fn num_agents(&self) -> Option<usize> {
        match self {
            TopologySpec::Line(n) | TopologySpec::Complete(n) => Some(*n),
            TopologySpec::RandomGeometric { agents, .. } => Some(*agents),
            TopologySpec::EdgeList(_) => None,
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::Line(n) => write!(f, "line:{n}"),
            TopologySpec::Complete(n) => write!(f, "complete:{n}"),
            TopologySpec::RandomGeometric { agents, radius } => write!(f, "rgg:{agents}:{radius}"),
            TopologySpec::EdgeList(p) => write!(f, "{}", p.display()),
        }
    }
}

fn parse_field<T: FromStr>(field: &str, s: &str) -> Result<T, ConfigError> {
    s.trim()
        .parse()
        .map_err(|_| ConfigError::new(field, format!("cannot parse {s:?}")))
}

impl FromStr for TopologySpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["line", n] => Ok(TopologySpec::Line(parse_field("topology", n)?)),
            ["complete", n] => Ok(TopologySpec::Complete(parse_field("topology", n)?)),
            ["rgg", n, r] => Ok(TopologySpec::RandomGeometric {
                agents: parse_field("topology", n)?,
                radius: parse_field("topology", r)?,
            }),
            ["line" | "complete" | "rgg", ..] => Err(ConfigError::new(
                "topology",
                format!("malformed topology {s:?}; expected line:N, complete:N or rgg:N:radius"),
            )),
            _ if s.is_empty() => Err(ConfigError::new("topology", "empty topology")),
            _ => Ok(TopologySpec::EdgeList(PathBuf::from(s))),
        }
    }
}

string_serde!(TopologySpec);

/// Synthetic train/test data drawn from the same class means.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            train: 6000,
            test: 1000,
            classes: 10,
            dim: 196,
            noise: 0.5,
            seed: 1,
        }
    }
}

/// Training/test data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DataSpec {
    /// Directory with the four uncompressed MNIST IDX files.
    Mnist(PathBuf),
    Synthetic(SyntheticData),
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSpec::Mnist(p) => write!(f, "{}", p.display()),
            DataSpec::Synthetic(s) => write!(
                f,
                "synthetic:train={},test={},classes={},dim={},noise={},seed={}",
                s.train, s.test, s.classes, s.dim, s.noise, s.seed
            ),
        }
    }
}

impl FromStr for DataSpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("synthetic") else {
            if s.is_empty() {
                return Err(ConfigError::new("data", "empty data path"));
            }
            return Ok(DataSpec::Mnist(PathBuf::from(s.strip_prefix("mnist:").unwrap_or(s))));
        };
        let rest = match rest {
            "" => "",
            r => r
                .strip_prefix(':')
                .ok_or_else(|| ConfigError::new("data", format!("malformed data source {s:?}")))?,
        };
        let mut spec = SyntheticData::default();
        for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::new("data", format!("expected key=value, found {kv:?}")))?;
            match k.trim() {
                "train" => spec.train = parse_field("data.train", v)?,
                "test" => spec.test = parse_field("data.test", v)?,
                "classes" => spec.classes = parse_field("data.classes", v)?,
                "dim" => spec.dim = parse_field("data.dim", v)?,
                "noise" => spec.noise = parse_field("data.noise", v)?,
                "seed" => spec.seed = parse_field("data.seed", v)?,
                other => {
                    return Err(ConfigError::new("data", format!("unknown synthetic key {other:?}")))
                }
            }
        }
        Ok(DataSpec::Synthetic(spec))
    }
}

string_serde!(DataSpec);

/// Which agents receive class-restricted shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NonIidAgents {
    None,
    /// Each agent independently with the given probability.
    Random(f64),
    Agents(Vec<AgentId>),
    /// The `n` most central agents by closeness.
    Central(usize),
    /// The `n` least central agents by closeness.
    Edge(usize),
}

impl fmt::Display for NonIidAgents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonIidAgents::None => f.write_str("none"),
            NonIidAgents::Random(p) => write!(f, "random:{p}"),
            NonIidAgents::Agents(ids) => {
                let ids: Vec<String> = ids.iter().map(ToString::to_string).collect();
                write!(f, "agents:{}", ids.join(","))
            }
            NonIidAgents::Central(n) => write!(f, "central:{n}"),
            NonIidAgents::Edge(n) => write!(f, "edge:{n}"),
        }
    }
}

impl FromStr for NonIidAgents {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const FIELD: &str = "partition.noniid";
        match s.split_once(':') {
            None if s == "none" => Ok(NonIidAgents::None),
            None if s == "all" => Ok(NonIidAgents::Random(1.0)),
            Some(("random", p)) => Ok(NonIidAgents::Random(parse_field(FIELD, p)?)),
            Some(("agents", list)) => Ok(NonIidAgents::Agents(
                list.split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| parse_field(FIELD, t))
                    .collect::<Result<_, _>>()?,
            )),
            Some(("central", n)) => Ok(NonIidAgents::Central(parse_field(FIELD, n)?)),
            Some(("edge", n)) => Ok(NonIidAgents::Edge(parse_field(FIELD, n)?)),
            _ => Err(ConfigError::new(
                FIELD,
                format!("expected none, all, random:P, agents:i,j,..., central:N or edge:N; found {s:?}"),
            )),
        }
    }
}

string_serde!(NonIidAgents);

/// Number of distinct classes a non-IID agent observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ClassCount {
    Fixed(usize),
    /// Drawn uniformly from `1..=n` per agent.
    UpTo(usize),
}

impl fmt::Display for ClassCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassCount::Fixed(n) => write!(f, "{n}"),
            ClassCount::UpTo(n) => write!(f, "upto:{n}"),
        }
    }
}

impl FromStr for ClassCount {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("upto:") {
            Some(n) => Ok(ClassCount::UpTo(parse_field("partition.classes", n)?)),
            None => Ok(ClassCount::Fixed(parse_field("partition.classes", s)?)),
        }
    }
}

string_serde!(ClassCount);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// `D_k` for every agent unless `shard_sizes` is given.
    pub shard_size: usize,
    /// Per-agent `D_k` for unbalanced runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard_sizes: Option<Vec<usize>>,
    pub noniid: NonIidAgents,
    pub classes: ClassCount,
    #[serde(default)]
    pub iid_disjoint: bool,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            shard_size: 600,
            shard_sizes: None,
            noniid: NonIidAgents::None,
            classes: ClassCount::Fixed(5),
            iid_disjoint: false,
        }
    }
}

impl PartitionSpec {
    pub fn sizes(&self, num_agents: usize) -> Vec<usize> {
        self.shard_sizes
            .clone()
            .unwrap_or_else(|| vec![self.shard_size; num_agents])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub rule: Rule,
    /// `E`.
    pub epochs: usize,
    /// `T`, communication rounds per epoch.
    pub rounds_per_epoch: usize,
    /// `b`.
    pub batch_size: usize,
    /// SGD steps per round; defaults to `ceil(D_k / (b * T))` per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_batches_per_round: Option<usize>,
    /// `mu`, shared by all agents.
    pub mu: f64,
    /// Scale `a` of the Gompertz weighting.
    pub gombertz_a: f64,
    pub seed: u64,
    pub topology: TopologySpec,
    /// Unset means "take it from the environment".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    pub partition: PartitionSpec,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init: InitMode,
    /// Evaluate on a seeded subset of this many test samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_subset: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Diffusion,
            rule: Rule::Constant,
            epochs: 30,
            rounds_per_epoch: 6,
            batch_size: 10,
            local_batches_per_round: None,
            mu: 0.01,
            gombertz_a: 5.0,
            seed: 0,
            topology: TopologySpec::Line(4),
            data: None,
            partition: PartitionSpec::default(),
            hidden: vec![64, 64],
            init: InitMode::Shared,
            eval_subset: None,
        }
    }
}

impl RunConfig {
    /// Checks field ranges and cross-field conflicts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(ConfigError::new(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        if self.seed > i64::MAX as u64 {
            return Err(ConfigError::new("seed", "must not exceed 2^63 - 1"));
        }
        positive("rounds_per_epoch", self.rounds_per_epoch)?;
        positive("batch_size", self.batch_size)?;
        positive("partition.shard_size", self.partition.shard_size)?;
        if let Some(n) = self.local_batches_per_round {
            positive("local_batches_per_round", n)?;
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ConfigError::new("mu", "must be a positive finite number"));
        }
        if !(self.gombertz_a > 0.0 && self.gombertz_a.is_finite()) {
            return Err(ConfigError::new("gombertz_a", "must be a positive finite number"));
        }
        if self.hidden.contains(&0) {
            return Err(ConfigError::new("hidden", "layer widths must be positive"));
        }
        if let Some(0) = self.eval_subset {
            return Err(ConfigError::new("eval_subset", "must be positive"));
        }
        if self.rule == Rule::Adaptive && !self.algorithm.combines() {
            return Err(ConfigError::new(
                "rule",
                format!("the {} algorithm has no combine step; use the constant rule", self.algorithm),
            ));
        }
        match &self.topology {
            TopologySpec::Line(0) | TopologySpec::Complete(0) | TopologySpec::RandomGeometric { agents: 0, .. } => {
                return Err(ConfigError::new("topology", "needs at least one agent"))
            }
            TopologySpec::RandomGeometric { radius, .. } if !(*radius > 0.0 && *radius <= 1.0) => {
                return Err(ConfigError::new("topology", "radius must lie in (0, 1]"))
            }
            TopologySpec::EdgeList(p) if !p.is_file() => {
                return Err(ConfigError::new("topology", format!("no edge list at {}", p.display())))
            }
            _ => {}
        }
        if self.algorithm == Algorithm::Consensus && self.topology.num_agents() == Some(1) {
            return Err(ConfigError::new("algorithm", "consensus needs at least two agents"));
        }
        if let (Some(sizes), Some(n)) = (&self.partition.shard_sizes, self.topology.num_agents()) {
            if sizes.len() != n {
                return Err(ConfigError::new(
                    "partition.shard_sizes",
                    format!("{} sizes for {n} agents", sizes.len()),
                ));
            }
            if sizes.contains(&0) {
                return Err(ConfigError::new("partition.shard_sizes", "sizes must be positive"));
            }
        }
        match self.partition.classes {
            ClassCount::Fixed(0) | ClassCount::UpTo(0) => {
                return Err(ConfigError::new("partition.classes", "must be positive"))
            }
            _ => {}
        }
        if let NonIidAgents::Random(p) = self.partition.noniid {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::new("partition.noniid", "probability must lie in [0, 1]"));
            }
        }
        if let DataSpec::Synthetic(s) = self.data.as_ref().unwrap_or(&DataSpec::Mnist(PathBuf::new())) {
            if s.train == 0 || s.test == 0 || s.classes == 0 || s.dim == 0 {
                return Err(ConfigError::new("data", "synthetic sizes must be positive"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    /// Hex digest of every field except the seed; repetitions of one
    /// experiment share it.
    pub fn fingerprint(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let digest = Sha256::digest(unseeded.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short label such as `diffusion-adaptive`.
    pub fn variant(&self) -> String {
        if self.algorithm.combines() {
            format!("{}-{}", self.algorithm, self.rule)
        } else {
            self.algorithm.to_string()
        }
    }
}
