use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::{index, IndexedRandom};
use rand_chacha::ChaCha8Rng;

use super::{DataError, LabeledDataset, Sample};
use crate::seed::{SeedStreams, Stream};
use crate::AgentId;

/// How each agent's shard is drawn from the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    /// `D_k` per agent.
    pub shard_sizes: Vec<usize>,
    /// Non-IID agents and the number of distinct classes each may observe.
    pub noniid: BTreeMap<AgentId, usize>,
    /// IID agents draw from samples no earlier IID agent has taken.
    pub iid_disjoint: bool,
}

impl PartitionPlan {
    pub fn uniform(num_agents: usize, shard_size: usize) -> Self {
        Self {
            shard_sizes: vec![shard_size; num_agents],
            noniid: BTreeMap::new(),
            iid_disjoint: false,
        }
    }

    pub fn with_noniid(mut self, agents: impl IntoIterator<Item = AgentId>, classes: usize) -> Self {
        self.noniid.extend(agents.into_iter().map(|k| (k, classes)));
        self
    }
}

/// One agent's view of the pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    /// Pool row indices, `D_k` of them.
    pub indices: Vec<usize>,
    /// Permitted classes, ascending. `None` for IID agents.
    pub classes: Option<Vec<usize>>,
}

/// Per-agent shards over a shared, immutable pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedDataset {
    pool: Arc<LabeledDataset>,
    shards: Vec<Shard>,
}

impl ShardedDataset {
    /// Wraps explicit shards; indices must be in range.
    pub fn from_shards(pool: Arc<LabeledDataset>, shards: Vec<Shard>) -> Result<Self, DataError> {
        for s in &shards {
            if let Some(&i) = s.indices.iter().find(|&&i| i >= pool.len()) {
                return Err(DataError::InvalidArgument(format!(
                    "shard index {i} out of range for a pool of {}",
                    pool.len()
                )));
            }
        }
        Ok(Self { pool, shards })
    }

    /// Every agent gets the whole pool as its shard.
    pub fn whole(pool: Arc<LabeledDataset>, num_agents: usize) -> Self {
        let shard = Shard {
            indices: (0..pool.len()).collect(),
            classes: None,
        };
        Self {
            pool,
            shards: vec![shard; num_agents],
        }
    }

    pub fn pool(&self) -> &Arc<LabeledDataset> {
        &self.pool
    }

    pub fn num_agents(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, k: AgentId) -> &Shard {
        &self.shards[k]
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.indices.len()).collect()
    }

    pub fn samples(&self, k: AgentId) -> impl Iterator<Item = Sample<'_>> + '_ {
        self.shards[k].indices.iter().map(|&i| self.pool.sample(i))
    }

    /// Concatenation of all shards, in agent order.
    pub fn union(&self) -> LabeledDataset {
        let all: Vec<usize> = self
            .shards
            .iter()
            .flat_map(|s| s.indices.iter().copied())
            .collect();
        self.pool.select(&all)
    }
}

/// Draws one shard per agent.
///
/// IID agents sample `D_k` rows uniformly without replacement from the
/// whole pool (shards of different agents may overlap unless
/// `iid_disjoint`). A non-IID agent first draws its classes uniformly
/// without replacement, then samples only rows of those classes.
pub fn partition(
    pool: Arc<LabeledDataset>,
    plan: &PartitionPlan,
    streams: &SeedStreams,
) -> Result<ShardedDataset, DataError> {
    let num_classes = pool.num_classes();
    let by_class = pool.indices_by_class();
    let mut taken = vec![false; pool.len()];
    let mut shards = Vec::with_capacity(plan.shard_sizes.len());

    for (agent, &needed) in plan.shard_sizes.iter().enumerate() {
        let mut rng = streams.rng(Stream::Partition, agent as u64);
        let shard = match plan.noniid.get(&agent) {
            Some(&c) => {
                if c == 0 || c > num_classes {
                    return Err(DataError::TooManyClasses {
                        requested: c,
                        num_classes,
                    });
                }
                let classes = choose_classes(&mut rng, num_classes, c);
                let eligible: Vec<usize> = classes
                    .iter()
                    .flat_map(|&cl| by_class[cl].iter().copied())
                    .collect();
                Shard {
                    indices: draw(&mut rng, &eligible, needed, agent)?,
                    classes: Some(classes),
                }
            }
            None => {
                let eligible: Vec<usize> = if plan.iid_disjoint {
                    (0..pool.len()).filter(|&i| !taken[i]).collect()
                } else {
                    (0..pool.len()).collect()
                };
                let indices = draw(&mut rng, &eligible, needed, agent)?;
                if plan.iid_disjoint {
                    for &i in &indices {
                        taken[i] = true;
                    }
                }
                Shard {
                    indices,
                    classes: None,
                }
            }
        };
        shards.push(shard);
    }
    Ok(ShardedDataset { pool, shards })
}

fn choose_classes(rng: &mut ChaCha8Rng, num_classes: usize, count: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..num_classes).collect();
    let mut chosen: Vec<usize> = all.choose_multiple(rng, count).copied().collect();
    chosen.sort_unstable();
    chosen
}

fn draw(
    rng: &mut ChaCha8Rng,
    eligible: &[usize],
    needed: usize,
    agent: AgentId,
) -> Result<Vec<usize>, DataError> {
    if needed == 0 {
        return Err(DataError::EmptyShard);
    }
    if eligible.len() < needed {
        return Err(DataError::InsufficientSamples {
            agent,
            needed,
            available: eligible.len(),
        });
    }
    Ok(index::sample(rng, eligible.len(), needed)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}
