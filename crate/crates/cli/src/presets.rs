//! Named experiment bundles.

use difflearn::config::{ClassCount, DataSpec, NonIidAgents, PartitionSpec, SyntheticData, TopologySpec};
use difflearn::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: RunConfig,
    pub repetitions: usize,
}

fn noniid(noniid: NonIidAgents) -> PartitionSpec {
    PartitionSpec {
        shard_size: 600,
        noniid,
        classes: ClassCount::UpTo(5),
        ..PartitionSpec::default()
    }
}

fn mnist(topology: TopologySpec, partition: PartitionSpec) -> RunConfig {
    RunConfig {
        topology,
        partition,
        ..RunConfig::default()
    }
}

fn rgg20() -> TopologySpec {
    TopologySpec::RandomGeometric {
        agents: 20,
        radius: 0.35,
    }
}

/// Every shipped preset, in display order.
pub fn registry() -> Vec<Preset> {
    vec![
        Preset {
            name: "mnist-n4-noniid",
            summary: "4-agent line, each agent non-IID with probability 1/2, up to 5 classes",
            config: mnist(TopologySpec::Line(4), noniid(NonIidAgents::Random(0.5))),
            repetitions: 10,
        },
        Preset {
            name: "mnist-n20-noniid",
            summary: "20-agent random geometric network, random non-IID agents",
            config: mnist(rgg20(), noniid(NonIidAgents::Random(0.5))),
            repetitions: 10,
        },
        Preset {
            name: "mnist-n20-central5",
            summary: "20-agent network, the 5 most central agents non-IID",
            config: mnist(rgg20(), noniid(NonIidAgents::Central(5))),
            repetitions: 10,
        },
        Preset {
            name: "mnist-n20-edge5",
            summary: "20-agent network, the 5 least central agents non-IID",
            config: mnist(rgg20(), noniid(NonIidAgents::Edge(5))),
            repetitions: 10,
        },
        Preset {
            name: "synthetic-smoke",
            summary: "seconds-long 4-agent run on synthetic data",
            config: RunConfig {
                epochs: 8,
                hidden: vec![16],
                topology: TopologySpec::Line(4),
                data: Some(DataSpec::Synthetic(SyntheticData {
                    train: 2000,
                    test: 400,
                    ..SyntheticData::default()
                })),
                partition: PartitionSpec {
                    shard_size: 200,
                    ..noniid(NonIidAgents::Random(0.5))
                },
                ..RunConfig::default()
            },
            repetitions: 2,
        },
    ]
}

pub fn names() -> Vec<&'static str> {
    registry().iter().map(|p| p.name).collect()
}

pub fn find(name: &str) -> Option<Preset> {
    registry().into_iter().find(|p| p.name == name)
}
