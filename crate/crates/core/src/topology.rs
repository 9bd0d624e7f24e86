//! Undirected agent graphs and neighbourhood queries.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed::derive_seed;
use crate::AgentId;

const MAX_GENERATION_ATTEMPTS: u64 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("a network needs at least one agent")]
    EmptyNetwork,
    #[error("agent id {id} out of range for a network of {num_agents} agents")]
    InvalidAgentId { id: AgentId, num_agents: usize },
    #[error("self-loop on agent {0}")]
    SelfLoop(AgentId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(AgentId, AgentId),
    #[error("graph is disconnected: {reached} of {num_agents} agents reachable from agent 0")]
    DisconnectedGraph { reached: usize, num_agents: usize },
    #[error("radius {0} outside (0, 1]")]
    InvalidRadius(f64),
    #[error("no connected graph found after {0} attempts")]
    GenerationFailed(u64),
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading edge list: {0}")]
    Io(String),
}

/// An immutable, connected, undirected agent graph.
///
/// Neighbourhoods are precomputed in ascending id order, both with the agent
/// itself (`N_k`) and without it (`N_k` minus `k`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_agents: usize,
    edges: Vec<(AgentId, AgentId)>,
    open: Vec<Vec<AgentId>>,
    closed: Vec<Vec<AgentId>>,
}

impl Topology {
    /// Validates the edge list and checks connectivity.
    pub fn new(num_agents: usize, edges: &[(AgentId, AgentId)]) -> Result<Self, TopologyError> {
        if num_agents == 0 {
            return Err(TopologyError::EmptyNetwork);
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![BTreeSet::new(); num_agents];
        for &(a, b) in edges {
            for id in [a, b] {
                if id >= num_agents {
                    return Err(TopologyError::InvalidAgentId { id, num_agents });
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateEdge(a, b));
            }
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }

        let reached = reachable_from_zero(&adjacency);
        if reached != num_agents {
            return Err(TopologyError::DisconnectedGraph { reached, num_agents });
        }

        let open: Vec<Vec<AgentId>> = adjacency
            .iter()
            .map(|set| set.iter().copied().collect())
            .collect();
        let closed = open
            .iter()
            .enumerate()
            .map(|(k, nbrs)| {
                let mut v = nbrs.clone();
                let pos = v.partition_point(|&j| j < k);
                v.insert(pos, k);
                v
            })
            .collect();
        Ok(Self {
            num_agents,
            edges: seen.into_iter().collect(),
            open,
            closed,
        })
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn line(num_agents: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = (1..num_agents).map(|k| (k - 1, k)).collect();
        Self::new(num_agents, &edges)
    }

    /// Complete graph on `num_agents` nodes.
    pub fn complete(num_agents: usize) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for a in 0..num_agents {
            for b in a + 1..num_agents {
                edges.push((a, b));
            }
        }
        Self::new(num_agents, &edges)
    }

    /// Random geometric graph on the unit square: agents are placed
    /// uniformly and joined when within `radius`. Placements are redrawn
    /// with a fresh derived seed until the graph is connected.
    pub fn random_geometric(num_agents: usize, radius: f64, seed: u64) -> Result<Self, TopologyError> {
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(TopologyError::InvalidRadius(radius));
        }
        if num_agents == 0 {
            return Err(TopologyError::EmptyNetwork);
        }
        for attempt in 0..MAX_GENERATION_ATTEMPTS {
            let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, b"random-geometric", attempt));
            let points: Vec<(f64, f64)> = (0..num_agents)
                .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let mut edges = Vec::new();
            for a in 0..num_agents {
                for b in a + 1..num_agents {
                    let (dx, dy) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
                    if (dx * dx + dy * dy).sqrt() <= radius {
                        edges.push((a, b));
                    }
                }
            }
            match Self::new(num_agents, &edges) {
                Ok(t) => return Ok(t),
                Err(TopologyError::DisconnectedGraph { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(TopologyError::GenerationFailed(MAX_GENERATION_ATTEMPTS))
    }

    /// Parses the edge-list text format: first non-comment line is `N`,
    /// then one whitespace-separated `k j` pair per line. `#` starts a
    /// comment.
    pub fn parse_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut num_agents = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse = |tok: &str| {
                tok.parse::<usize>().map_err(|_| TopologyError::Parse {
                    line: i + 1,
                    message: format!("expected a non-negative integer, found {tok:?}"),
                })
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match (num_agents, tokens.as_slice()) {
                (None, [n]) => num_agents = Some(parse(n)?),
                (None, _) => {
                    return Err(TopologyError::Parse {
                        line: i + 1,
                        message: "first line must hold the agent count".into(),
                    })
                }
                (Some(_), [a, b]) => edges.push((parse(a)?, parse(b)?)),
                (Some(_), _) => {
                    return Err(TopologyError::Parse {
                        line: i + 1,
                        message: "expected an edge `k j`".into(),
                    })
                }
            }
        }
        let n = num_agents.ok_or(TopologyError::Parse {
            line: 0,
            message: "missing agent count".into(),
        })?;
        Self::new(n, &edges)
    }

    pub fn load_edge_list(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_edge_list(&text)
    }

    /// Serialises to the edge-list text format.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.num_agents);
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// Edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> &[(AgentId, AgentId)] {
        &self.edges
    }

    /// `N_k` when `include_self`, otherwise `N_k` without `k`; ascending.
    pub fn neighborhood(&self, k: AgentId, include_self: bool) -> Result<&[AgentId], TopologyError> {
        if k >= self.num_agents {
            return Err(TopologyError::InvalidAgentId {
                id: k,
                num_agents: self.num_agents,
            });
        }
        Ok(if include_self { &self.closed[k] } else { &self.open[k] })
    }

    pub fn degree(&self, k: AgentId) -> usize {
        self.open[k].len()
    }

    /// Agents sorted from most to least central by closeness (inverse mean
    /// hop distance). Ties go to the lower id.
    pub fn by_closeness(&self) -> Vec<AgentId> {
        let totals: Vec<usize> = (0..self.num_agents)
            .map(|k| self.hop_distances(k).iter().sum())
            .collect();
        let mut ids: Vec<AgentId> = (0..self.num_agents).collect();
        ids.sort_by_key(|&k| (totals[k], k));
        ids
    }

    fn hop_distances(&self, source: AgentId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_agents];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.open[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

fn reachable_from_zero(adjacency: &[BTreeSet<AgentId>]) -> usize {
    let mut visited = vec![false; adjacency.len()];
    visited[0] = true;
    let mut stack = vec![0];
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adjacency[u] {
            if !visited[v] {
                visited[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count
}
