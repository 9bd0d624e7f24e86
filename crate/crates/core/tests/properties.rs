use std::collections::BTreeMap;
use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use difflearn::data::{LabeledDataset, Sample};
use difflearn::metrics::{RecordRow, RunRecord};
use difflearn::rules::{adaptive_weights, combine, constant_weights, gradient_angle, AngleState, Gompertz};
use difflearn::topology::Topology;
use difflearn::{Mlp, MlpSpec, ParamVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sizes_and_angles() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(1usize..5000, n),
            prop::collection::vec(0.0..PI, n),
        )
    })
}

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

proptest! {
    #[test]
    fn weights_lie_on_the_simplex((sizes, angles) in sizes_and_angles(), a in 0.1..20.0f64) {
        let ids: Vec<usize> = (0..sizes.len()).collect();
        let smoothed: BTreeMap<usize, f64> = angles.iter().copied().enumerate().collect();
        let c = constant_weights(&ids, &sizes).unwrap();
        let w = adaptive_weights(&ids, &sizes, &smoothed, Gompertz::new(a).unwrap()).unwrap();
        for wv in [&c, &w] {
            prop_assert!(wv.entries().iter().all(|&(_, x)| x >= 0.0));
            prop_assert!((wv.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn equal_angles_reproduce_constant_weights(sizes in prop::collection::vec(1usize..5000, 1..12), theta in 0.0..PI) {
        let ids: Vec<usize> = (0..sizes.len()).collect();
        let smoothed: BTreeMap<usize, f64> = ids.iter().map(|&k| (k, theta)).collect();
        let c = constant_weights(&ids, &sizes).unwrap();
        let w = adaptive_weights(&ids, &sizes, &smoothed, Gompertz::new(5.0).unwrap()).unwrap();
        prop_assert_eq!(c, w);
    }

    #[test]
    fn smaller_angle_never_gets_less_weight(x in 0.0..PI, y in 0.0..PI, a in 0.5..10.0f64) {
        let smoothed = BTreeMap::from([(0, x.min(y)), (1, x.max(y))]);
        let w = adaptive_weights(&[0, 1], &[100, 100], &smoothed, Gompertz::new(a).unwrap()).unwrap();
        prop_assert!(w.get(0).unwrap() >= w.get(1).unwrap());
    }

    #[test]
    fn angle_is_scale_invariant(pair in (2usize..20).prop_flat_map(|n| (vector(n), vector(n))), s in 0.01..100.0f64, t in 0.01..100.0f64) {
        let (d, g) = (ParamVector::from_vec(pair.0), ParamVector::from_vec(pair.1));
        prop_assume!(d.norm() > 1e-3 && g.norm() > 1e-3);
        let base = gradient_angle(&d, &g).unwrap();
        let scaled = gradient_angle(&d.scaled(s), &g.scaled(t)).unwrap();
        prop_assert!((0.0..=PI).contains(&base));
        prop_assert!((base - scaled).abs() <= 1e-9);
    }

    #[test]
    fn smoothed_angle_is_the_running_mean(rounds in prop::collection::vec(prop::collection::vec(0.0..PI, 3), 1..100)) {
        let mut state = AngleState::new();
        for raw in &rounds {
            state = state.update(&raw.iter().copied().enumerate().collect()).unwrap();
        }
        for k in 0..3 {
            let direct = rounds.iter().map(|r| r[k]).sum::<f64>() / rounds.len() as f64;
            prop_assert!((state.smoothed()[&k] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn combine_matches_the_weighted_sum(models in prop::collection::vec(vector(6), 1..6), sizes in prop::collection::vec(1usize..100, 6)) {
        let ids: Vec<usize> = (0..models.len()).collect();
        let weights = constant_weights(&ids, &sizes).unwrap();
        let params: Vec<ParamVector> = models.iter().cloned().map(ParamVector::from_vec).collect();
        let refs: BTreeMap<usize, &ParamVector> = params.iter().enumerate().collect();
        let out = combine(&refs, &weights).unwrap();
        let total: usize = sizes[..models.len()].iter().sum();
        for i in 0..6 {
            let expected: f64 = models.iter().enumerate().map(|(k, m)| sizes[k] as f64 / total as f64 * m[i]).sum();
            prop_assert!((out.as_slice()[i] - expected).abs() <= 1e-9);
            let lo = models.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.as_slice()[i] >= lo - 1e-12 && out.as_slice()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn neighborhoods_are_symmetric(n in 1usize..25, radius in 0.3..1.0f64, seed in any::<u64>()) {
        let Ok(t) = Topology::random_geometric(n, radius, seed) else { return Ok(()) };
        for k in 0..n {
            prop_assert!(t.neighborhood(k, true).unwrap().contains(&k));
            for &j in t.neighborhood(k, false).unwrap() {
                prop_assert!(j != k);
                prop_assert!(t.neighborhood(j, false).unwrap().contains(&k));
            }
        }
    }

    #[test]
    fn record_text_round_trips(rows in prop::collection::vec((0usize..50, 0usize..8, 0.0..1.0f64, 0.0..10.0f64, any::<u32>()), 0..40), seed in 0u64..1 << 40) {
        let record = RunRecord {
            fingerprint: "00ff00ff00ff00ff".into(),
            seed,
            num_agents: 8,
            rows: rows
                .into_iter()
                .map(|(epoch, agent, accuracy, loss, sent)| RecordRow { epoch, agent, accuracy, loss, params_sent: sent.into() })
                .collect(),
        };
        prop_assert_eq!(RunRecord::from_text(&record.to_text()).unwrap(), record);
    }
}

/// `max(|a|, |b|, 1e-6)`: the floor keeps the comparison meaningful for
/// components that are zero up to the `eps / h` rounding of the quotient.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for draw in 0..10 {
        let dim = rng.random_range(2..7);
        let classes = rng.random_range(2..5);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(2..6)).collect();
        let mlp = Mlp::new(MlpSpec { init_seed: draw, ..MlpSpec::new(dim, hidden, classes) }).unwrap();
        let w = mlp.init_params();
        let n = rng.random_range(1..6);
        let features: Vec<f32> = (0..n * dim).map(|_| rng.random::<f32>()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let data = LabeledDataset::new(features, labels, dim, classes).unwrap();
        let batch: Vec<Sample<'_>> = data.samples().collect();
        let (_, grad) = mlp.loss_and_gradient(&w, &batch).unwrap();
        for _ in 0..5 {
            let i = rng.random_range(0..w.len());
            let h = 1e-4;
            let mut plus = w.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = w.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (mlp.loss(&plus, batch.iter().copied()).unwrap() - mlp.loss(&minus, batch.iter().copied()).unwrap()) / (2.0 * h);
            let analytic = grad.as_slice()[i];
            assert!(rel_err(analytic, fd) <= 1e-5, "draw {draw} param {i}: {analytic} vs {fd}");
        }
    }
}

#[test]
fn angle_landmarks() {
    let g = ParamVector::from_vec(vec![1.0, 2.0, -0.5]);
    // the local gradient direction is -delta
    assert_abs_diff_eq!(gradient_angle(&g.scaled(-3.0), &g).unwrap(), 0.0, epsilon = 1e-9);
    assert_abs_diff_eq!(gradient_angle(&g.scaled(0.5), &g).unwrap(), PI, epsilon = 1e-9);
    let orth = ParamVector::from_vec(vec![2.0, -1.0, 0.0]);
    assert_abs_diff_eq!(gradient_angle(&orth, &g).unwrap(), PI / 2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(gradient_angle(&ParamVector::zeros(3), &g).unwrap(), PI / 2.0, epsilon = 1e-9);
}
