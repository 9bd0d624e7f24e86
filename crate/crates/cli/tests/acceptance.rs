//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Oracles here are written independently of the library: a hand-rolled
//! one-hidden-layer network for server-side averaging, direct means for
//! angle smoothing, and closed-form message counts for the ledger.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use difflearn::config::{ClassCount, DataSpec, NonIidAgents, PartitionSpec, SyntheticData, TopologySpec};
use difflearn::data::{LabeledDataset, Sample};
use difflearn::experiment::{self, load_data, prepare};
use difflearn::metrics::epochs_to_threshold;
use difflearn::rules::{adaptive_weights, constant_weights, gradient_angle, AngleState, Gompertz};
use difflearn::{Algorithm, Execution, Mlp, MlpSpec, ParamVector, Rule, RunConfig, RunOptions, Simulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, fail: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(fail())
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    check(elapsed <= budget, || format!("took {elapsed:.2?}, budget {budget:?}"))
}

fn weight_simplex() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.random_range(1..=25);
        let ids: Vec<usize> = (0..n).collect();
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..10_000)).collect();
        let angles: BTreeMap<usize, f64> = ids.iter().map(|&k| (k, rng.random_range(0.0..PI))).collect();
        let g = Gompertz::new(rng.random_range(0.1..20.0)).unwrap();
        let c = constant_weights(&ids, &sizes).unwrap();
        let a = adaptive_weights(&ids, &sizes, &angles, g).unwrap();
        for w in [&c, &a] {
            check(w.entries().iter().all(|&(_, x)| x >= 0.0), || format!("case {case}: negative weight"))?;
            worst = worst.max((w.sum() - 1.0).abs());
        }
        let theta = rng.random_range(0.0..PI);
        let equal: BTreeMap<usize, f64> = ids.iter().map(|&k| (k, theta)).collect();
        check(adaptive_weights(&ids, &sizes, &equal, g).unwrap() == c, || {
            format!("case {case}: equal angles differ from constant weights")
        })?;
    }
    check(worst <= 1e-12, || format!("max |sum - 1| = {worst:e}"))?;
    within_budget(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 cases, max |sum - 1| = {worst:.1e}, {:.2?}", start.elapsed()))
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, mut worst) = (1e-4, 0.0f64);
    for draw in 0..10u64 {
        let dim = rng.random_range(2..12);
        let classes = rng.random_range(2..10);
        let depth = rng.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..10)).collect();
        let mlp = Mlp::new(MlpSpec {
            init_seed: draw,
            ..MlpSpec::new(dim, hidden, classes)
        })
        .unwrap();
        let mut w = mlp.init_params();
        for x in w.as_mut_slice() {
            *x += rng.random_range(-0.1..0.1);
        }
        let n = rng.random_range(1..8);
        let features: Vec<f32> = (0..n * dim).map(|_| rng.random()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let data = LabeledDataset::new(features, labels, dim, classes).unwrap();
        let batch: Vec<Sample<'_>> = data.samples().collect();
        let (_, grad) = mlp.loss_and_gradient(&w, &batch).unwrap();
        for _ in 0..5 {
            let i = rng.random_range(0..w.len());
            let shifted = |d: f64| {
                let mut v = w.clone();
                v.as_mut_slice()[i] += d;
                mlp.loss(&v, batch.iter().copied()).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let g = grad.as_slice()[i];
            // floor: components near zero are only resolved to eps/h by the quotient
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    check(worst <= 1e-5, || format!("max relative error {worst:e}"))?;
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("50 probes over 10 draws, max relative error {worst:.1e}"))
}

/// Independent single-hidden-layer ReLU network with softmax
/// cross-entropy, using the same flat layout as the library.
struct OracleNet {
    f: usize,
    h: usize,
    c: usize,
}

impl OracleNet {
    fn grad(&self, w: &[f64], batch: &[Sample<'_>]) -> Vec<f64> {
        let (f, h, c) = (self.f, self.h, self.c);
        let (w1, b1) = (0, h * f);
        let (w2, b2) = (h * f + h, h * f + h + c * h);
        let mut g = vec![0.0; w.len()];
        for s in batch {
            let x: Vec<f64> = s.features.iter().map(|&v| v as f64).collect();
            let z1: Vec<f64> = (0..h).map(|j| w[b1 + j] + (0..f).map(|i| w[w1 + j * f + i] * x[i]).sum::<f64>()).collect();
            let a1: Vec<f64> = z1.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
            let z2: Vec<f64> = (0..c).map(|o| w[b2 + o] + (0..h).map(|j| w[w2 + o * h + j] * a1[j]).sum::<f64>()).collect();
            let m = z2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z2.iter().map(|z| (z - m).exp()).collect();
            let total: f64 = e.iter().sum();
            let mut d2: Vec<f64> = e.iter().map(|v| v / total).collect();
            d2[s.label] -= 1.0;
            let mut d1 = vec![0.0; h];
            for o in 0..c {
                g[b2 + o] += d2[o];
                for j in 0..h {
                    g[w2 + o * h + j] += d2[o] * a1[j];
                    d1[j] += d2[o] * w[w2 + o * h + j];
                }
            }
            for j in 0..h {
                if z1[j] <= 0.0 {
                    continue;
                }
                g[b1 + j] += d1[j];
                for i in 0..f {
                    g[w1 + j * f + i] += d1[j] * x[i];
                }
            }
        }
        g.iter().map(|v| v / batch.len() as f64).collect()
    }
}

fn synthetic(train: usize, dim: usize) -> DataSpec {
    DataSpec::Synthetic(SyntheticData {
        train,
        test: 500,
        dim,
        ..SyntheticData::default()
    })
}

fn fedavg_equivalence() -> Outcome {
    let start = Instant::now();
    let data = synthetic(2000, 12);
    let config = RunConfig {
        topology: TopologySpec::Complete(5),
        hidden: vec![7],
        mu: 0.05,
        local_batches_per_round: Some(4),
        partition: PartitionSpec {
            shard_size: 120,
            ..PartitionSpec::default()
        },
        data: Some(data.clone()),
        seed: 5,
        ..RunConfig::default()
    };
    let (train, _) = load_data(&data).unwrap();
    let train = Arc::new(train);
    let p = prepare(&config, train.clone()).unwrap();
    let net = OracleNet {
        f: 12,
        h: 7,
        c: 10,
    };
    let mut sim = Simulation::new(&config, p.topology, p.mlp, p.shards, Execution::Parallel).unwrap();
    let mut samplers: Vec<_> = sim.agents().iter().map(|a| a.sampler.clone()).collect();
    let mut server = sim.agents()[0].w.as_slice().to_vec();
    let (mut spread, mut gap) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        sim.run_round().unwrap();
        let mut clients = Vec::new();
        for sampler in &mut samplers {
            let mut local = server.clone();
            for _ in 0..4 {
                let batch: Vec<Sample<'_>> = sampler.next_batch().iter().map(|&i| train.sample(i)).collect();
                let g = net.grad(&local, &batch);
                for (x, gi) in local.iter_mut().zip(g) {
                    *x -= config.mu * gi;
                }
            }
            clients.push(local);
        }
        server = (0..server.len()).map(|i| clients.iter().map(|c| c[i]).sum::<f64>() / 5.0).collect();
        let models = sim.models();
        for m in &models {
            for (i, v) in m.as_slice().iter().enumerate() {
                gap = gap.max((v - server[i]).abs());
                spread = spread.max((v - models[0].as_slice()[i]).abs());
            }
        }
    }
    check(spread <= 1e-12 && gap <= 1e-12, || format!("agent spread {spread:e}, oracle gap {gap:e}"))?;
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("3 rounds, agent spread {spread:.1e}, server-oracle gap {gap:.1e}"))
}

fn angle_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let g = ParamVector::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        // build a vector orthogonal to g by Gram-Schmidt
        let r = ParamVector::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut orth = r.clone();
        orth.axpy(-r.dot(&g).unwrap() / g.dot(&g).unwrap(), &g).unwrap();
        let s = rng.random_range(0.01..100.0);
        // the local gradient is -delta, so delta = -s g is aligned with g
        for (delta, expected) in [(g.scaled(-s), 0.0), (orth.clone(), PI / 2.0), (g.scaled(s), PI)] {
            worst = worst.max((gradient_angle(&delta, &g).unwrap() - expected).abs());
        }
        let d = ParamVector::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let base = gradient_angle(&d, &g).unwrap();
        let (p, q) = (rng.random_range(0.001..1000.0), rng.random_range(0.001..1000.0));
        worst = worst.max((gradient_angle(&d.scaled(p), &g.scaled(q)).unwrap() - base).abs());
    }
    check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("200 constructions, max deviation {worst:.1e}"))
}

fn smoothing_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = AngleState::new();
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let raw: BTreeMap<usize, f64> = (0..6).map(|l| (l, rng.random_range(0.0..PI))).collect();
        for (l, &v) in &raw {
            history[*l].push(v);
        }
        state = state.update(&raw).unwrap();
        for (l, h) in history.iter().enumerate() {
            let mean = h.iter().sum::<f64>() / h.len() as f64;
            worst = worst.max((state.smoothed()[&l] - mean).abs());
        }
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 rounds x 6 neighbours, max deviation {worst:.1e}"))
}

fn communication_ledger() -> Outcome {
    let data = synthetic(1500, 10);
    let (train, test) = load_data(&data).unwrap();
    let train = Arc::new(train);
    let mut lines = Vec::new();
    for (topology, n) in [(TopologySpec::Line(4), 4u64), (TopologySpec::RandomGeometric { agents: 7, radius: 0.6 }, 7)] {
        for algorithm in [Algorithm::Diffusion, Algorithm::Consensus] {
            for (rule, factor) in [(Rule::Constant, 1u64), (Rule::Adaptive, 2)] {
                let config = RunConfig {
                    algorithm,
                    rule,
                    epochs: 3,
                    rounds_per_epoch: 4,
                    hidden: vec![5, 4],
                    topology: topology.clone(),
                    partition: PartitionSpec {
                        shard_size: 60,
                        ..PartitionSpec::default()
                    },
                    data: Some(data.clone()),
                    ..RunConfig::default()
                };
                let record = experiment::run(&config, train.clone(), &test, &RunOptions::default()).unwrap();
                // M for a 10-5-4-10 network: sum of fan_in*fan_out + fan_out
                let m = (10 * 5 + 5) + (5 * 4 + 4) + (4 * 10 + 10);
                let expected = n * factor * m * 3 * 4;
                check(record.total_params_sent() == expected, || {
                    format!("{} on {topology}: {} != {expected}", config.variant(), record.total_params_sent())
                })?;
                lines.push(expected);
            }
        }
    }
    Ok(format!("{} runs match N*M*E*T (constant) and N*2M*E*T (adaptive) exactly", lines.len()))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_difflearn"))
            .args(["run", "--preset", "synthetic-smoke", "--seed", "3", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        check(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        outputs.push(read_dir_bytes(&out));
    }
    check(!outputs[0].is_empty(), || "no files written".into())?;
    check(outputs[0] == outputs[1], || "record files differ between runs".into())?;
    within_budget(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{} files bit-identical across two runs, {:.2?}", outputs[0].len(), start.elapsed()))
}

fn trend_reproduction() -> Outcome {
    let start = Instant::now();
    let data = DataSpec::Synthetic(SyntheticData {
        train: 6000,
        test: 1000,
        ..SyntheticData::default()
    });
    let (train, test) = load_data(&data).unwrap();
    let train = Arc::new(train);
    let run = |algorithm, rule, seed| {
        let config = RunConfig {
            algorithm,
            rule,
            seed,
            hidden: vec![32],
            topology: TopologySpec::Line(4),
            data: Some(data.clone()),
            partition: PartitionSpec {
                shard_size: 200,
                noniid: NonIidAgents::Random(1.0),
                classes: ClassCount::Fixed(5),
                ..PartitionSpec::default()
            },
            ..RunConfig::default()
        };
        experiment::run(&config, train.clone(), &test, &RunOptions::default()).unwrap()
    };
    let (mut faster, mut beats) = (0, 0);
    let mut detail = Vec::new();
    for seed in 0..5 {
        let adaptive = run(Algorithm::Diffusion, Rule::Adaptive, seed);
        let constant = run(Algorithm::Diffusion, Rule::Constant, seed);
        let isolated = run(Algorithm::Isolated, Rule::Constant, seed);
        let ea = epochs_to_threshold(&adaptive.network_mean(), 0.85);
        let ec = epochs_to_threshold(&constant.network_mean(), 0.85);
        // adaptive must actually reach the threshold to count
        if ea.is_some_and(|a| ec.is_none_or(|c| a <= c)) {
            faster += 1;
        }
        let fi = isolated.final_accuracy().unwrap();
        if adaptive.final_accuracy().unwrap() > fi && constant.final_accuracy().unwrap() > fi {
            beats += 1;
        }
        let show = |e: Option<usize>| e.map_or("-".to_string(), |e| e.to_string());
        detail.push(format!("s{seed}:{}/{}", show(ea), show(ec)));
    }
    let summary = format!(
        "adaptive<=constant epochs-to-0.85 in {faster}/5 [{}], both beat isolated in {beats}/5, {:.1?}",
        detail.join(" "),
        start.elapsed()
    );
    check(faster >= 4 && beats == 5, || summary.clone())?;
    within_budget(start.elapsed(), Duration::from_secs(120))?;
    Ok(summary)
}

fn main() -> ExitCode {
    // the libtest flags cargo forwards (e.g. --nocapture) are irrelevant here
    let criteria: [Criterion; 8] = [
        ("weight simplex", weight_simplex),
        ("gradient oracle", gradient_oracle),
        ("fedavg equivalence", fedavg_equivalence),
        ("angle identities", angle_identities),
        ("smoothing oracle", smoothing_oracle),
        ("communication ledger", communication_ledger),
        ("determinism", determinism),
        ("trend reproduction", trend_reproduction),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS  {name:<22} {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<22} {detail}");
            }
        }
    }
    println!(
        "PASS  {:<22} only orderings and epochs-to-threshold are asserted, never absolute accuracy",
        "no absolute targets"
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
