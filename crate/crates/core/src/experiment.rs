//! Resolves a [`RunConfig`] into topology, shards and model, then runs it.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::config::{Algorithm, ClassCount, DataSpec, NonIidAgents, RunConfig, TopologySpec};
use crate::data::{load_mnist, partition, DataError, LabeledDataset, PartitionPlan, ShardedDataset, SyntheticSpec};
use crate::engine::{run_centralized, run_experiment, EngineError, RunAborted, RunOptions};
use crate::metrics::RunRecord;
use crate::model::{Mlp, MlpSpec, ModelError};
use crate::seed::{SeedStreams, Stream};
use crate::topology::{Topology, TopologyError};
use crate::AgentId;

/// `(train, test)` for a data source.
pub fn load_data(spec: &DataSpec) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    match spec {
        DataSpec::Mnist(dir) => load_mnist(dir),
        DataSpec::Synthetic(s) => {
            let base = SyntheticSpec {
                num_samples: s.train,
                num_classes: s.classes,
                feature_dim: s.dim,
                noise: s.noise,
                seed: s.seed,
            };
            let test = SyntheticSpec {
                num_samples: s.test,
                seed: s.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
                ..base.clone()
            };
            Ok((base.generate()?, test.generate()?))
        }
    }
}

pub fn build_topology(spec: &TopologySpec, streams: &SeedStreams) -> Result<Topology, TopologyError> {
    match spec {
        TopologySpec::Line(n) => Topology::line(*n),
        TopologySpec::Complete(n) => Topology::complete(*n),
        TopologySpec::RandomGeometric { agents, radius } => {
            let seed = streams.rng(Stream::Topology, 0).random::<u64>();
            Topology::random_geometric(*agents, *radius, seed)
        }
        TopologySpec::EdgeList(path) => Topology::load_edge_list(path),
    }
}

/// Chooses the non-IID agents and how many classes each observes.
pub fn noniid_assignment(
    config: &RunConfig,
    topology: &Topology,
    streams: &SeedStreams,
) -> BTreeMap<AgentId, usize> {
    let n = topology.num_agents();
    let mut rng = streams.rng(Stream::Partition, u64::MAX);
    let count = |rng: &mut rand_chacha::ChaCha8Rng| match config.partition.classes {
        ClassCount::Fixed(c) => c,
        ClassCount::UpTo(c) => rng.random_range(1..=c.max(1)),
    };
    let chosen: Vec<AgentId> = match &config.partition.noniid {
        NonIidAgents::None => Vec::new(),
        NonIidAgents::Random(p) => {
            let mut ids = Vec::new();
            for k in 0..n {
                if rng.random_bool(*p) {
                    ids.push(k);
                }
            }
            ids
        }
        NonIidAgents::Agents(ids) => ids.clone(),
        NonIidAgents::Central(m) => topology.by_closeness().into_iter().take(*m).collect(),
        NonIidAgents::Edge(m) => topology.by_closeness().into_iter().rev().take(*m).collect(),
    };
    let mut chosen = chosen;
    chosen.sort_unstable();
    chosen.dedup();
    chosen.into_iter().map(|k| (k, count(&mut rng))).collect()
}

/// Everything a run needs besides the config itself.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub topology: Topology,
    pub shards: ShardedDataset,
    pub mlp: Mlp,
}

pub fn prepare(config: &RunConfig, train: Arc<LabeledDataset>) -> Result<Prepared, EngineError> {
    config.validate()?;
    let streams = SeedStreams::new(config.seed);
    let topology = build_topology(&config.topology, &streams)?;
    let n = topology.num_agents();
    let sizes = config.partition.sizes(n);
    if sizes.len() != n {
        return Err(EngineError::ShardCountMismatch {
            shards: sizes.len(),
            agents: n,
        });
    }
    for &k in noniid_keys(&config.partition.noniid) {
        if k >= n {
            return Err(TopologyError::InvalidAgentId { id: k, num_agents: n }.into());
        }
    }
    let plan = PartitionPlan {
        shard_sizes: sizes,
        noniid: noniid_assignment(config, &topology, &streams),
        iid_disjoint: config.partition.iid_disjoint,
    };
    let spec = MlpSpec {
        input_dim: train.feature_dim(),
        hidden_dims: config.hidden.clone(),
        num_classes: train.num_classes(),
        init_seed: config.seed,
    };
    let shards = partition(train, &plan, &streams)?;
    let mlp = Mlp::new(spec).map_err(EngineError::Model)?;
    Ok(Prepared { topology, shards, mlp })
}

fn noniid_keys(n: &NonIidAgents) -> &[AgentId] {
    match n {
        NonIidAgents::Agents(ids) => ids,
        _ => &[],
    }
}

/// The evaluation set: the whole test set, or a seeded subset of it.
pub fn evaluation_set<'a>(config: &RunConfig, test: &'a LabeledDataset) -> Cow<'a, LabeledDataset> {
    match config.eval_subset {
        Some(m) if m < test.len() => {
            let mut rng = SeedStreams::new(config.seed).rng(Stream::Evaluation, 0);
            let mut picked = index::sample(&mut rng, test.len(), m).into_vec();
            picked.sort_unstable();
            Cow::Owned(test.select(&picked))
        }
        _ => Cow::Borrowed(test),
    }
}

/// Prepares and runs one configuration end to end.
pub fn run(
    config: &RunConfig,
    train: Arc<LabeledDataset>,
    test: &LabeledDataset,
    options: &RunOptions,
) -> Result<RunRecord, RunAborted> {
    let aborted = |source: EngineError| RunAborted {
        partial: Box::new(RunRecord::new(config.fingerprint(), config.seed, 0)),
        last_epoch: None,
        source,
    };
    if test.feature_dim() != train.feature_dim() {
        return Err(aborted(
            ModelError::DimensionMismatch {
                expected: train.feature_dim(),
                found: test.feature_dim(),
            }
            .into(),
        ));
    }
    let prepared = prepare(config, train).map_err(aborted)?;
    let eval = evaluation_set(config, test);
    match config.algorithm {
        Algorithm::Centralized => {
            let pool = prepared.shards.union();
            run_centralized(config, prepared.mlp, pool, &eval, options)
        }
        _ => run_experiment(config, prepared.topology, prepared.mlp, prepared.shards, &eval, options),
    }
}
