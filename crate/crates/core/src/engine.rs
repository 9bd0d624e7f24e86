//! Synchronous adapt / exchange / combine rounds over the agent graph.
//!
//! A round has three phases separated by barriers:
//!
//! 1. every agent runs a few SGD steps from its current model (`psi`) and
//!    records `delta = psi - w`;
//! 2. every agent posts a round-stamped message with `psi` (and `delta`
//!    under the adaptive rule);
//! 3. every agent combines the messages of its neighbourhood.
//!
//! Phases 1 and 3 fan out across agents (see [`Execution`]); each agent's
//! arithmetic is independent of the schedule, so sequential and parallel
//! runs agree bit for bit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint;
use crate::config::{Algorithm, ConfigError, InitMode, Rule, RunConfig};
use crate::data::{BatchSampler, DataError, LabeledDataset, Sample, ShardedDataset};
use crate::exec::{map_mut, map_range};
pub use crate::exec::Execution;
use crate::metrics::{RecordRow, RunRecord};
use crate::model::{Mlp, ModelError, ParamVector};
use crate::rules::{
    adaptive_weights, combine, constant_weights, gradient_angle, neighborhood_gradient, AngleState,
    Gompertz, RuleError, WeightVector,
};
use crate::seed::{SeedStreams, Stream};
use crate::topology::{Topology, TopologyError};
use crate::AgentId;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("agent {agent}: non-finite {what} in round {round}")]
    NonFinite {
        agent: AgentId,
        round: u64,
        what: &'static str,
    },
    #[error("agent {agent} received a round-{found} message from {from} during round {expected}")]
    StaleMessage {
        agent: AgentId,
        from: AgentId,
        expected: u64,
        found: u64,
    },
    #[error("{shards} shards for {agents} agents")]
    ShardCountMismatch { shards: usize, agents: usize },
    #[error("writing checkpoint: {0}")]
    Checkpoint(String),
}

/// One agent's protocol state.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: AgentId,
    /// Current model `w_k`.
    pub w: ParamVector,
    /// Intermediate model from the latest adapt step.
    pub psi: ParamVector,
    /// `psi - w` from the latest adapt step.
    pub delta: ParamVector,
    pub mu: f64,
    pub angles: AngleState,
    pub sampler: BatchSampler,
    /// SGD steps per adapt.
    pub local_batches: usize,
    /// Round in which `psi` and `delta` were produced.
    pub stamp: u64,
}

/// Runs `num_batches` SGD steps from `agent.w` and stores the result in
/// `psi` and `delta`. `w` is left untouched.
pub fn adapt(
    agent: &mut AgentState,
    mlp: &Mlp,
    pool: &LabeledDataset,
    num_batches: usize,
    round: u64,
) -> Result<(), EngineError> {
    let mut current = agent.w.clone();
    for _ in 0..num_batches {
        let batch: Vec<Sample<'_>> = agent.sampler.next_batch().iter().map(|&i| pool.sample(i)).collect();
        let (_, grad) = mlp.loss_and_gradient(&current, &batch).map_err(|e| match e {
            ModelError::NonFiniteValue(what) => EngineError::NonFinite {
                agent: agent.id,
                round,
                what,
            },
            other => other.into(),
        })?;
        current.axpy(-agent.mu, &grad)?;
    }
    if !current.is_finite() {
        return Err(EngineError::NonFinite {
            agent: agent.id,
            round,
            what: "intermediate model",
        });
    }
    agent.delta = current.sub(&agent.w)?;
    agent.psi = current;
    agent.stamp = round;
    Ok(())
}

/// What an agent broadcasts after adapting.
#[derive(Debug, Clone, Copy)]
pub struct Message<'a> {
    pub from: AgentId,
    pub round: u64,
    pub psi: &'a ParamVector,
    pub delta: Option<&'a ParamVector>,
}

/// Parameters sent per agent per round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    rounds: Vec<Vec<u64>>,
}

impl CommLedger {
    pub fn record(&mut self, sent: Vec<u64>) {
        self.rounds.push(sent);
    }

    pub fn rounds(&self) -> &[Vec<u64>] {
        &self.rounds
    }

    pub fn total(&self) -> u64 {
        self.rounds.iter().flatten().sum()
    }

    pub fn agent_total(&self, k: AgentId) -> u64 {
        self.rounds.iter().map(|r| r[k]).sum()
    }
}

/// Outcome of one round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    /// Combination weights each agent used; empty when nothing is combined.
    pub weights: Vec<WeightVector>,
    pub sent: Vec<u64>,
}

/// Protocol settings lifted from a [`RunConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub algorithm: Algorithm,
    pub rule: Rule,
    pub gompertz: Gompertz,
}

impl Protocol {
    pub fn from_config(config: &RunConfig) -> Result<Self, EngineError> {
        Ok(Self {
            algorithm: config.algorithm,
            rule: config.rule,
            gompertz: Gompertz::new(config.gombertz_a)?,
        })
    }

    fn include_self(&self) -> bool {
        self.algorithm != Algorithm::Consensus
    }
}

/// The whole network between rounds.
#[derive(Debug, Clone)]
pub struct Simulation {
    protocol: Protocol,
    topology: Topology,
    mlp: Mlp,
    shards: ShardedDataset,
    agents: Vec<AgentState>,
    round: u64,
    ledger: CommLedger,
    execution: Execution,
}

impl Simulation {
    pub fn new(
        config: &RunConfig,
        topology: Topology,
        mlp: Mlp,
        shards: ShardedDataset,
        execution: Execution,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let n = topology.num_agents();
        if shards.num_agents() != n {
            return Err(EngineError::ShardCountMismatch {
                shards: shards.num_agents(),
                agents: n,
            });
        }
        let streams = SeedStreams::new(config.seed);
        let shared = mlp.init_params_with(&mut streams.rng(Stream::Init, 0));
        let mut agents = Vec::with_capacity(n);
        for k in 0..n {
            let w = match config.init {
                InitMode::Shared => shared.clone(),
                InitMode::Divergent => mlp.init_params_with(&mut streams.rng(Stream::Init, k as u64)),
            };
            let shard = shards.shard(k);
            let local_batches = config
                .local_batches_per_round
                .unwrap_or_else(|| shard.indices.len().div_ceil(config.batch_size * config.rounds_per_epoch));
            agents.push(AgentState {
                id: k,
                psi: w.clone(),
                delta: ParamVector::zeros(w.len()),
                w,
                mu: config.mu,
                angles: AngleState::new(),
                sampler: BatchSampler::new(
                    &shard.indices,
                    config.batch_size,
                    streams.rng(Stream::Batching, k as u64),
                )?,
                local_batches: local_batches.max(1),
                stamp: 0,
            });
        }
        Ok(Self {
            protocol: Protocol::from_config(config)?,
            topology,
            mlp,
            shards,
            agents,
            round: 0,
            ledger: CommLedger::default(),
            execution,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentState] {
        &mut self.agents
    }

    pub fn models(&self) -> Vec<ParamVector> {
        self.agents.iter().map(|a| a.w.clone()).collect()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn shards(&self) -> &ShardedDataset {
        &self.shards
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    /// Rounds completed so far (`t`).
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Parameters each agent broadcasts per round.
    pub fn params_per_message(&self) -> u64 {
        let m = self.mlp.num_params() as u64;
        match (self.protocol.algorithm.combines(), self.protocol.rule) {
            (false, _) => 0,
            (true, Rule::Constant) => m,
            (true, Rule::Adaptive) => 2 * m,
        }
    }

    /// Adapt, exchange and combine once for every agent.
    pub fn run_round(&mut self) -> Result<RoundReport, EngineError> {
        let t = self.round + 1;
        let (mlp, pool) = (&self.mlp, self.shards.pool().as_ref());
        map_mut(self.execution, &mut self.agents, |agent| {
            let batches = agent.local_batches;
            adapt(agent, mlp, pool, batches, t)
        })
        .into_iter()
        .collect::<Result<(), _>>()?;

        let n = self.agents.len();
        if !self.protocol.algorithm.combines() {
            for agent in &mut self.agents {
                agent.w = agent.psi.clone();
            }
            self.round = t;
            self.ledger.record(vec![0; n]);
            return Ok(RoundReport {
                round: t,
                weights: Vec::new(),
                sent: vec![0; n],
            });
        }

        let adaptive = self.protocol.rule == Rule::Adaptive;
        let outbox: Vec<Message<'_>> = self
            .agents
            .iter()
            .map(|a| Message {
                from: a.id,
                round: a.stamp,
                psi: &a.psi,
                delta: adaptive.then_some(&a.delta),
            })
            .collect();
        let step_sizes: BTreeMap<AgentId, f64> = self.agents.iter().map(|a| (a.id, a.mu)).collect();
        let sizes = self.shards.shard_sizes();

        let combined = map_range(self.execution, n, |k| {
            combine_agent(
                k,
                t,
                &self.protocol,
                &self.topology,
                &outbox,
                &step_sizes,
                &sizes,
                &self.agents[k].angles,
            )
        });

        let mut weights = Vec::with_capacity(n);
        let mut updates = Vec::with_capacity(n);
        for result in combined {
            let (w, angles, wv) = result?;
            updates.push((w, angles));
            weights.push(wv);
        }
        for (agent, (w, angles)) in self.agents.iter_mut().zip(updates) {
            agent.w = w;
            if let Some(a) = angles {
                agent.angles = a;
            }
        }

        let sent = vec![self.params_per_message(); n];
        self.ledger.record(sent.clone());
        self.round = t;
        Ok(RoundReport {
            round: t,
            weights,
            sent,
        })
    }

    /// Test accuracy of every agent's model and its loss on its own shard.
    pub fn evaluate(&self, test: &LabeledDataset) -> Result<Vec<(f64, f64)>, EngineError> {
        map_range(self.execution, self.agents.len(), |k| {
            let w = &self.agents[k].w;
            let accuracy = self.mlp.evaluate(w, test.samples())?.accuracy;
            let loss = self.mlp.loss(w, self.shards.samples(k))?;
            Ok((accuracy, loss))
        })
        .into_iter()
        .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn combine_agent(
    k: AgentId,
    round: u64,
    protocol: &Protocol,
    topology: &Topology,
    outbox: &[Message<'_>],
    step_sizes: &BTreeMap<AgentId, f64>,
    sizes: &[usize],
    angles: &AngleState,
) -> Result<(ParamVector, Option<AngleState>, WeightVector), EngineError> {
    let neighbors = topology.neighborhood(k, protocol.include_self())?;
    for &l in neighbors {
        let msg = &outbox[l];
        if msg.round != round {
            return Err(EngineError::StaleMessage {
                agent: k,
                from: l,
                expected: round,
                found: msg.round,
            });
        }
    }
    let base = constant_weights(neighbors, sizes)?;
    let (weights, new_angles) = match protocol.rule {
        Rule::Constant => (base, None),
        Rule::Adaptive => {
            let deltas: BTreeMap<AgentId, &ParamVector> = neighbors
                .iter()
                .map(|&l| (l, outbox[l].delta.expect("adaptive messages carry delta")))
                .collect();
            let global = neighborhood_gradient(&deltas, step_sizes, &base)?;
            let raw = deltas
                .iter()
                .map(|(&l, d)| Ok((l, gradient_angle(d, &global)?)))
                .collect::<Result<BTreeMap<_, _>, RuleError>>()?;
            let updated = angles.update(&raw)?;
            let w = adaptive_weights(neighbors, sizes, updated.smoothed(), protocol.gompertz)?;
            (w, Some(updated))
        }
    };
    let models: BTreeMap<AgentId, &ParamVector> = neighbors.iter().map(|&l| (l, outbox[l].psi)).collect();
    let w = combine(&models, &weights)?;
    if !w.is_finite() {
        return Err(EngineError::NonFinite {
            agent: k,
            round,
            what: "combined model",
        });
    }
    Ok((w, new_angles, weights))
}

/// Knobs that do not change the numbers a run produces.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub execution: Execution,
    /// Write one checkpoint file per epoch into this directory.
    pub checkpoint_dir: Option<PathBuf>,
}

/// A run that stopped early, with the rows recorded before the failure.
#[derive(Debug, Error)]
#[error("run aborted after epoch {last_epoch:?}: {source}")]
pub struct RunAborted {
    pub partial: Box<RunRecord>,
    pub last_epoch: Option<usize>,
    #[source]
    pub source: EngineError,
}

impl RunAborted {
    fn before_start(source: impl Into<EngineError>, config: &RunConfig) -> Self {
        Self {
            partial: Box::new(RunRecord::new(config.fingerprint(), config.seed, 0)),
            last_epoch: None,
            source: source.into(),
        }
    }
}

fn push_epoch(record: &mut RunRecord, sim: &Simulation, epoch: usize, evals: &[(f64, f64)]) {
    for (k, &(accuracy, loss)) in evals.iter().enumerate() {
        record.rows.push(RecordRow {
            epoch,
            agent: k,
            accuracy,
            loss,
            params_sent: sim.ledger.agent_total(k),
        });
    }
}

/// Runs `E` epochs of `T` rounds and evaluates every agent after each
/// epoch (plus once before training as epoch 0).
pub fn run_experiment(
    config: &RunConfig,
    topology: Topology,
    mlp: Mlp,
    shards: ShardedDataset,
    test: &LabeledDataset,
    options: &RunOptions,
) -> Result<RunRecord, RunAborted> {
    let mut sim = Simulation::new(config, topology, mlp, shards, options.execution)
        .map_err(|e| RunAborted::before_start(e, config))?;
    let mut record = RunRecord::new(config.fingerprint(), config.seed, sim.agents.len());
    let mut last_epoch = None;

    let step = |sim: &mut Simulation, record: &mut RunRecord, epoch: usize| -> Result<(), EngineError> {
        if epoch > 0 {
            for _ in 0..config.rounds_per_epoch {
                sim.run_round()?;
            }
        }
        let evals = sim.evaluate(test)?;
        push_epoch(record, sim, epoch, &evals);
        if let Some(dir) = &options.checkpoint_dir {
            let path = dir.join(format!("checkpoint-epoch{epoch:04}.bin"));
            checkpoint::write(&path, epoch as u64, &sim.models())
                .map_err(|e| EngineError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    };

    for epoch in 0..=config.epochs {
        if let Err(source) = step(&mut sim, &mut record, epoch) {
            return Err(RunAborted {
                partial: Box::new(record),
                last_epoch,
                source,
            });
        }
        last_epoch = Some(epoch);
    }
    Ok(record)
}

/// Trains one model on `pool` with the same per-epoch sample budget: a
/// single-agent network with no exchange.
pub fn run_centralized(
    config: &RunConfig,
    mlp: Mlp,
    pool: LabeledDataset,
    test: &LabeledDataset,
    options: &RunOptions,
) -> Result<RunRecord, RunAborted> {
    let mut single = config.clone();
    single.algorithm = Algorithm::Centralized;
    single.rule = Rule::Constant;
    let topology = Topology::new(1, &[]).map_err(|e| RunAborted::before_start(e, config))?;
    let shards = ShardedDataset::whole(std::sync::Arc::new(pool), 1);
    let mut record = run_experiment(&single, topology, mlp, shards, test, options)?;
    record.fingerprint = config.fingerprint();
    Ok(record)
}
