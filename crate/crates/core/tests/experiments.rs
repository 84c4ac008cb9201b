#![allow(clippy::needless_range_loop)]

use arcnet::capsules::RoutingConfig;
use arcnet::datasets::{stack_windows, synth_generate, SyntheticSpec};
use arcnet::encoder::EncoderConfig;
use arcnet::experiments::{corrupt_modality, evaluate, predict_windows, prior_heatmap, run_corruption_test, Aggregation};
use arcnet::model::{ModelConfig, ModelParams};
use arcnet::numerics::Tensor;
use arcnet::training::{ensemble_vote, Checkpoint};
use arcnet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, b: usize, n_imu: usize) -> Tensor {
    let n = b * n_imu * 6 * 128;
    Tensor::from_vec(&[b, n_imu, 6, 128], (0..n).map(|_| rng.random_range(0.5f32..1.5)).collect()).unwrap()
}

#[test]
fn exactly_one_slab_is_zeroed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_batch(&mut rng, 50, 3);
    let (y, chosen) = corrupt_modality(&x, 1.0, &mut rng).unwrap();
    let slab = 6 * 128;
    for s in 0..50 {
        let m = chosen[s].expect("always corrupted");
        for k in 0..3 {
            let r = (s * 3 + k) * slab..(s * 3 + k + 1) * slab;
            if k == m {
                assert_eq!(y.data()[r].iter().map(|v| v.abs()).sum::<f32>(), 0.0);
            } else {
                assert_eq!(&y.data()[r.clone()], &x.data()[r]);
            }
        }
    }
}

#[test]
fn slab_choice_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::zeros(&[10_000, 3, 6, 128]);
    let (_, chosen) = corrupt_modality(&x, 1.0, &mut rng).unwrap();
    let mut counts = [0usize; 3];
    for c in chosen {
        counts[c.unwrap()] += 1;
    }
    let expected = 10_000.0 / 3.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 2 degrees of freedom
    assert!(chi2 < 13.82, "{counts:?}");
    for c in counts {
        assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.02);
    }
}

#[test]
fn corruption_is_seeded() {
    let x = Tensor::zeros(&[100, 4, 6, 128]);
    let a = corrupt_modality(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().1;
    let b = corrupt_modality(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().1;
    assert_eq!(a, b);
}

fn checkpoint(seed: u64, n_classes: usize) -> Checkpoint {
    let cfg = ModelConfig {
        encoder: EncoderConfig { l1_channels: 4, l2_channels: 8, capsule_dim: 8 },
        out_dim: 8,
        ..ModelConfig::new(2, n_classes, RoutingConfig { iters: 3, eta: 0.1 })
    };
    Checkpoint {
        params: ModelParams::init(&cfg, seed),
        routing: cfg.routing,
        margin: Default::default(),
        rng: Default::default(),
        epoch: 0,
        val_loss: 0.0,
        config_hash: [0; 32],
    }
}

#[test]
fn zero_probability_gives_zero_deltas() {
    let split = synth_generate(&SyntheticSpec::new(2, 4, 10, 1)).unwrap();
    let r = run_corruption_test(&[checkpoint(3, 4)], &split.test, 4, 5, 0.0, 8).unwrap();
    assert_eq!(r.delta_wf1, 0.0);
    assert_eq!(r.delta_accuracy, 0.0);
    assert_eq!(r.clean, r.corrupted);
    assert!(r.chosen.iter().all(Option::is_none));
    let csv = r.to_csv(&split.class_names);
    assert!(csv.contains("delta_wf1,0\n"));
}

#[test]
fn untrained_model_shows_small_deltas() {
    let split = synth_generate(&SyntheticSpec::new(2, 4, 40, 1)).unwrap();
    let windows: Vec<_> = split.train.iter().chain(&split.test).cloned().collect();
    let r = run_corruption_test(&[checkpoint(3, 4)], &windows, 4, 5, 1.0, 16).unwrap();
    eprintln!("untrained deltas: wF1 {:.2} acc {:.2}", r.delta_wf1, r.delta_accuracy);
    assert!(r.delta_accuracy.abs() < 40.0);
    assert_eq!(r.chosen.len(), windows.len());
}

#[test]
fn class_count_mismatch_is_a_hard_error() {
    let split = synth_generate(&SyntheticSpec::new(2, 4, 10, 1)).unwrap();
    assert!(matches!(evaluate(&[checkpoint(1, 5)], &split.test, 4, 8), Err(Error::Dimension(_))));
}

#[test]
fn single_checkpoint_evaluation_equals_singleton_ensemble() {
    let split = synth_generate(&SyntheticSpec::new(2, 4, 10, 1)).unwrap();
    let c = checkpoint(4, 4);
    let preds = predict_windows(std::slice::from_ref(&c), &split.train, 5).unwrap();
    let (x, _) = stack_windows(&split.train).unwrap();
    assert_eq!(preds, ensemble_vote(std::slice::from_ref(&c), &x).unwrap());
    let report = evaluate(std::slice::from_ref(&c), &split.train, 4, 7).unwrap();
    assert_eq!(report.total(), split.train.len() as u64);
    let pair = evaluate(&[c.clone(), checkpoint(5, 4)], &split.train, 4, 7).unwrap();
    assert_eq!(pair.total(), split.train.len() as u64);
}

#[test]
fn heatmap_matches_scripted_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n_imu, c) = (7, 8);
    let b: Vec<f32> = (0..12 * n_imu * c).map(|_| rng.random_range(-2.0..2.0)).collect();
    let imus: Vec<String> = (0..n_imu).map(|m| format!("p{m}")).collect();
    let classes: Vec<String> = (0..c).map(|j| format!("a{j}")).collect();
    for agg in [Aggregation::Mean, Aggregation::Max] {
        let h = prior_heatmap(&Tensor::from_vec(&[12 * n_imu, c], b.clone()).unwrap(), &imus, &classes, agg).unwrap();
        // oracle: pool, then per-column min-max
        let mut pooled = vec![vec![0.0f64; c]; n_imu];
        for (m, row) in pooled.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let vals: Vec<f64> = (0..12).map(|t| b[(m * 12 + t) * c + j] as f64).collect();
                *cell = match agg {
                    Aggregation::Mean => vals.iter().sum::<f64>() / 12.0,
                    Aggregation::Max => vals.iter().cloned().fold(f64::MIN, f64::max),
                };
            }
        }
        for j in 0..c {
            let col: Vec<f64> = pooled.iter().map(|r| r[j]).collect();
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            for m in 0..n_imu {
                let expect = (col[m] - lo) / (hi - lo);
                assert!((h.matrix[m][j] - expect).abs() < 1e-6);
                assert!((0.0..=1.0).contains(&h.matrix[m][j]));
            }
        }
        let csv = h.to_csv();
        assert!(csv.starts_with("position,a0,a1"));
        assert_eq!(csv.lines().count(), n_imu + 1);
    }
}
