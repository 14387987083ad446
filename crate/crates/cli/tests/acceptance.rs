//! Acceptance suite. Each criterion runs at its stated tolerance and prints
//! one pass line (run with `--nocapture` to see them; a failed assertion is
//! a failed criterion).
//!
//! 1. F-measure consistency of the published result-table rows.
//! 2. Gradient suite: every graph op and full networks vs central finite
//!    differences, relative error <= 1e-4.
//! 3. SE equivalence: rigged gates make DPN-SE bit-identical to DPN; zeroed
//!    SE weights scale the input by exactly 0.5.
//! 4. Channel accounting on randomized configs; the DPN-92-shaped preset
//!    forward-passes a 3x224x224 input.
//! 5. Toy learning: >= 95% train / >= 80% holdout within 100 epochs, in
//!    under 10 minutes, reproducible to identical loss CSVs.
//! 6. Mechanism comparison over 5 seeds: mean holdout accuracy of DPN-SE
//!    within 2 points of (or above) plain DPN.
//! 7. LIME fidelity: linear black box recovered to 1e-3, single-tile
//!    indicator ranked top-1 in 10/10 seeded runs, ridge residual < 1e-8.
//! 8. Augmentation: 1000 draws all target-sized in [0,1], identity config
//!    pixel-exact, flip frequency within +-2% over 10,000 draws.
//! 9. Metrics vs a brute-force tally on 100 random label vectors, exact.

use std::time::Instant;

use dpnse_cli::config::{RunConfig, TrainConfig};
use dpnse_cli::manifest::DatasetManifest;
use dpnse_cli::synth::generate_dataset;
use dpnse_cli::train::{evaluate, load_dataset, split_dataset, train_model, LoadedDataset};
use dpnse_core::augment::{augment, AugmentConfig, Image};
use dpnse_core::gradcheck::{check_loss_fn, check_model_gradients, FD_STEP};
use dpnse_core::lime::{explain, segment_grid, LimeConfig, SuperpixelMap};
use dpnse_core::metrics::{f1_from, ConfusionMatrix};
use dpnse_core::net::{DpnSeConfig, Model, SeParams, StageConfig};
use dpnse_core::rng::stream_rng;
use dpnse_core::tensor::{BnStats, Graph, Tensor, TensorId};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn criterion_1_f_measure_consistency() {
    // Self-consistent table rows as (precision, recall, listed F); inputs
    // are two-decimal roundings, so the tolerance is +-0.015.
    let rows = [
        (0.98, 0.98, 0.98),
        (0.92, 0.95, 0.94),
        (0.72, 0.51, 0.60),
        (0.94, 0.96, 0.95),
        (0.74, 0.88, 0.81),
    ];
    for (p, r, listed) in rows {
        let f = f1_from(p, r);
        assert!(
            (f - listed).abs() <= 0.015,
            "f1({p}, {r}) = {f:.4} is not within 0.015 of listed {listed}"
        );
    }
    println!("[PASS] F-measure consistency: {} rows within +-0.015", rows.len());
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let project = |g: &mut Graph, out: TensorId, rng: &mut ChaCha8Rng| {
        let shape = g.shape(out).to_vec();
        let proj = random_tensor(&shape, rng);
        let pi = g.constant(proj);
        let prod = g.mul(out, pi).unwrap();
        g.sum_all(prod).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut total_coords = 0usize;
    let mut check = |name: &str, inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[TensorId]) -> dpnse_core::error::Result<TensorId>| {
        let report = check_loss_fn(inputs, FD_STEP, build).unwrap();
        assert!(
            report.max_error <= GRAD_TOL,
            "{name}: max relative error {:.3e} at {}",
            report.max_error,
            report.worst
        );
        worst = worst.max(report.max_error);
        total_coords += report.checked;
    };

    for point in 0..5u64 {
        let mut rng = stream_rng(9000 + point, 0);
        // Elementwise, activations, loss.
        let a = random_tensor(&[2, 3], &mut rng);
        let b = random_tensor(&[2, 3], &mut rng);
        let prng = stream_rng(9100 + point, 0);
        check("add", &[a.clone(), b.clone()], &|g, ids| {
            let y = g.add(ids[0], ids[1])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        check("mul", &[a.clone(), b.clone()], &|g, ids| {
            let y = g.mul(ids[0], ids[1])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        let off_kink: Vec<f64> = a
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
            .collect();
        let ok_t = Tensor::new(vec![2, 3], off_kink).unwrap();
        check("relu", &[ok_t], &|g, ids| {
            let y = g.relu(ids[0])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        check("sigmoid", &[a.clone()], &|g, ids| {
            let y = g.sigmoid(ids[0])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        check("softmax", &[random_tensor(&[3, 4], &mut rng)], &|g, ids| {
            let y = g.softmax(ids[0])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        check("cross_entropy", &[random_tensor(&[3, 4], &mut rng)], &|g, ids| {
            g.cross_entropy(ids[0], &[0, 2, 3])
        });

        // Convolution / pooling / linear.
        let x = random_tensor(&[2, 2, 5, 5], &mut rng);
        let w = random_tensor(&[3, 2, 3, 3], &mut rng);
        let stride = 1 + (point as usize % 2);
        check("conv2d", &[x.clone(), w], &|g, ids| {
            let y = g.conv2d(ids[0], ids[1], stride, 1)?;
            Ok(project(g, y, &mut prng.clone()))
        });
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut rng);
        let pool_in =
            Tensor::new(vec![1, 1, 4, 4], order.iter().map(|&v| v as f64 * 0.1).collect()).unwrap();
        check("maxpool2d", &[pool_in], &|g, ids| {
            let y = g.maxpool2d(ids[0], 2, 2)?;
            Ok(project(g, y, &mut prng.clone()))
        });
        check("global_avg_pool", &[random_tensor(&[2, 3, 3, 3], &mut rng)], &|g, ids| {
            let y = g.global_avg_pool(ids[0])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        let dx = random_tensor(&[3, 4], &mut rng);
        let dw = random_tensor(&[4, 2], &mut rng);
        let db = random_tensor(&[2], &mut rng);
        check("dense", &[dx, dw, db], &|g, ids| {
            let y = g.dense(ids[0], ids[1], ids[2])?;
            Ok(project(g, y, &mut prng.clone()))
        });

        // Normalization and channel ops.
        let bx = random_tensor(&[2, 3, 2, 2], &mut rng);
        let gamma = Tensor::new(vec![3], (0..3).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
        let beta = random_tensor(&[3], &mut rng);
        check("batch_norm(train)", &[bx.clone(), gamma.clone(), beta.clone()], &|g, ids| {
            let mut stats = BnStats::new(3);
            let y = g.batch_norm_train(ids[0], ids[1], ids[2], 1e-5, &mut stats, 0.1)?;
            Ok(project(g, y, &mut prng.clone()))
        });
        let mut stats = BnStats::new(3);
        for v in stats.var.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        check("batch_norm(eval)", &[bx, gamma, beta], &|g, ids| {
            let y = g.batch_norm_eval(ids[0], ids[1], ids[2], 1e-5, &stats)?;
            Ok(project(g, y, &mut prng.clone()))
        });
        let ca = random_tensor(&[2, 2, 3, 3], &mut rng);
        let cb = random_tensor(&[2, 3, 3, 3], &mut rng);
        check("concat/slice", &[ca, cb], &|g, ids| {
            let cat = g.concat_channels(ids[0], ids[1])?;
            let sl = g.slice_channels(cat, 1, 3)?;
            Ok(project(g, sl, &mut prng.clone()))
        });
        let sx = random_tensor(&[2, 3, 2, 2], &mut rng);
        let sz = random_tensor(&[2, 3], &mut rng);
        check("scale_channels", &[sx, sz], &|g, ids| {
            let y = g.scale_channels(ids[0], ids[1])?;
            Ok(project(g, y, &mut prng.clone()))
        });
        check("sum_all", &[random_tensor(&[7], &mut rng)], &|g, ids| g.sum_all(ids[0]));
    }

    // Full toy DPN-SE graph, sampled parameter coordinates at 5 points.
    let model = Model::new(DpnSeConfig::toy(), 7).unwrap();
    for point in 0..5u64 {
        let mut rng = stream_rng(9500 + point, 0);
        let batch = Tensor::new(
            vec![2, 1, 64, 64],
            (0..2 * 64 * 64).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let labels = [point as usize % 4, (point as usize + 1) % 4];
        let report =
            check_model_gradients(&model, &batch, &labels, Some(3), point, FD_STEP).unwrap();
        assert!(
            report.max_error <= GRAD_TOL,
            "toy DPN-SE point {point}: max relative error {:.3e} at {}",
            report.max_error,
            report.worst
        );
        worst = worst.max(report.max_error);
        total_coords += report.checked;
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient suite took {elapsed:?} (budget 1 minute)");
    println!(
        "[PASS] gradient suite: {total_coords} coordinates, max relative error {worst:.3e} <= 1e-4, in {elapsed:?}"
    );
}

#[test]
fn criterion_3_se_equivalence() {
    // Zeroed SE weights: output is exactly 0.5 * input.
    let mut rng = stream_rng(40, 0);
    let x = random_tensor(&[2, 3, 4, 4], &mut rng);
    let x = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|v| v.abs()).collect(),
    )
    .unwrap();
    let p = SeParams::zeros(3, 4);
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let out = p.apply(&mut g, xi, false).unwrap();
    for (&o, &i) in g.data(out).iter().zip(x.data()) {
        assert_eq!(o, 0.5 * i, "zeroed SE must halve exactly");
    }

    // Rigged gates: sigmoid saturates to exactly 1.0, and DPN-SE matches
    // plain DPN bit for bit under shared weights.
    let mut cfg = DpnSeConfig::toy();
    cfg.input_size = 32;
    let mut plain_cfg = cfg.clone();
    plain_cfg.se_enabled = false;
    let plain = Model::new(plain_cfg, 50).unwrap();
    let mut se = Model::new(cfg, 51).unwrap();
    let shared: Vec<String> = plain.params().keys().cloned().collect();
    for name in shared {
        *se.param_mut(&name).unwrap() = plain.param(&name).unwrap().clone();
    }
    let se_names: Vec<String> = se.params().keys().filter(|n| n.contains(".se.")).cloned().collect();
    for name in se_names {
        let fill = if name.ends_with(".b2") { 1000.0 } else { 0.0 };
        for v in se.param_mut(&name).unwrap().data_mut() {
            *v = fill;
        }
    }
    let mut brng = stream_rng(52, 0);
    let batch = Tensor::new(
        vec![2, 1, 32, 32],
        (0..2 * 32 * 32).map(|_| brng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let mut g1 = Graph::new();
    let out_plain = plain.forward_eval(&mut g1, &batch).unwrap();
    let mut g2 = Graph::new();
    let out_se = se.forward_eval(&mut g2, &batch).unwrap();
    let bits_a: Vec<u64> = g1.data(out_plain).iter().map(|v| v.to_bits()).collect();
    let bits_b: Vec<u64> = g2.data(out_se).iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_a, bits_b, "rigged DPN-SE must equal DPN bit for bit");
    println!("[PASS] SE equivalence: rigged gates bit-identical; zeroed weights halve exactly");
}

#[test]
fn criterion_4_channel_accounting() {
    // Randomized stage configs: output channels after substage i (1-based)
    // equal C_r + i*k at every boundary (the forward pass itself asserts
    // the plan; the trace is checked independently here).
    let mut rng = stream_rng(60, 0);
    let mut checked = 0usize;
    for case in 0..15 {
        let stages: Vec<StageConfig> = (0..4)
            .map(|_| StageConfig {
                substages: rng.random_range(1..4),
                residual_width: rng.random_range(1..9),
                dense_increment: rng.random_range(0..4),
                bottleneck_width: rng.random_range(1..5),
                stride: rng.random_range(1..3),
            })
            .collect();
        let cfg = DpnSeConfig {
            input_channels: 1,
            input_size: 32,
            stem_channels: 3,
            stages,
            se_enabled: case % 2 == 0,
            se_reduction: 2,
            num_classes: 4,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        };
        if cfg.validate().is_err() {
            continue;
        }
        let model = Model::new(cfg.clone(), case as u64).unwrap();
        let batch = random_tensor(&[1, 1, 32, 32], &mut rng);
        let batch = Tensor::new(
            batch.shape().to_vec(),
            batch.data().iter().map(|v| v.abs()).collect(),
        )
        .unwrap();
        let mut g = Graph::new();
        let (_, trace) = model.forward_eval_traced(&mut g, &batch).unwrap();
        for rec in &trace {
            let st = &cfg.stages[rec.stage];
            assert_eq!(
                g.shape(rec.output)[1],
                st.residual_width + (rec.substage + 1) * st.dense_increment,
                "case {case} stage {} substage {}",
                rec.stage,
                rec.substage
            );
            checked += 1;
        }
    }
    assert!(checked >= 40, "not enough random boundaries exercised ({checked})");

    // DPN-92-shaped preset builds and forward-passes a 3x224x224 input.
    let start = Instant::now();
    let cfg = DpnSeConfig::dpn92(3, 4);
    let model = Model::new(cfg, 1).unwrap();
    let params = model.param_count();
    let batch = Tensor::full(vec![1, 3, 224, 224], 0.5);
    let mut g = Graph::new();
    let logits = model.forward_eval(&mut g, &batch).unwrap();
    assert_eq!(g.shape(logits), &[1, 4]);
    assert!(g.data(logits).iter().all(|v| v.is_finite()));
    println!(
        "[PASS] channel accounting: {checked} random boundaries; DPN-92 preset ({params} params) forward in {:?}",
        start.elapsed()
    );
}

const SYNTH_SEED: u64 = 11;

fn toy_run(seed: u64, epochs: usize, se_enabled: bool) -> RunConfig {
    let mut model = DpnSeConfig::toy();
    model.se_enabled = se_enabled;
    RunConfig {
        model,
        augment: AugmentConfig::with_seed(seed),
        train: TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed,
            holdout_fraction: 0.2,
            augment: false,
            early_stop_acc: None,
        },
        lime: LimeConfig::with_seed(seed),
    }
}

fn synth_dataset(dir: &std::path::Path, n_per_class: usize) -> LoadedDataset {
    let manifest_path = generate_dataset(dir, n_per_class, SYNTH_SEED).unwrap();
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    load_dataset(&manifest).unwrap()
}

#[test]
fn criterion_5_toy_learning() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // 200 images at 64x64, trained for 25 (<= 100) epochs.
    let data = synth_dataset(dir.path(), 50);
    let run = toy_run(2024, 25, true);
    let parts = split_dataset(data.images.len(), run.train.holdout_fraction, run.train.seed);

    let (model, outcome) = train_model(&run, &data, &parts.train).unwrap();
    assert!(
        outcome.final_train_acc >= 0.95,
        "train accuracy {} below 0.95",
        outcome.final_train_acc
    );
    let holdout = evaluate(&model, &data, &parts.holdout, run.train.batch_size).unwrap();
    assert!(
        holdout.overall_accuracy >= 0.80,
        "holdout accuracy {} below 0.80",
        holdout.overall_accuracy
    );

    // Seed-reproducible to identical loss CSVs.
    let (_, outcome2) = train_model(&run, &data, &parts.train).unwrap();
    assert_eq!(outcome.csv, outcome2.csv, "loss CSVs differ between identical runs");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "toy learning took {elapsed:?} (budget 10 minutes)");
    println!(
        "[PASS] toy learning: train acc {:.3}, holdout acc {:.3}, {} epochs, reproducible CSV, in {elapsed:?}",
        outcome.final_train_acc, holdout.overall_accuracy, outcome.epochs_run
    );
}

#[test]
fn criterion_6_mechanism_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path(), 50);
    let mut mean_se = 0.0;
    let mut mean_plain = 0.0;
    let seeds = [101u64, 102, 103, 104, 105];
    for &seed in &seeds {
        for (se_enabled, acc_sum) in [(true, &mut mean_se), (false, &mut mean_plain)] {
            let run = toy_run(seed, 25, se_enabled);
            let parts =
                split_dataset(data.images.len(), run.train.holdout_fraction, run.train.seed);
            let (model, _) = train_model(&run, &data, &parts.train).unwrap();
            let report = evaluate(&model, &data, &parts.holdout, run.train.batch_size).unwrap();
            *acc_sum += report.overall_accuracy;
        }
    }
    mean_se /= seeds.len() as f64;
    mean_plain /= seeds.len() as f64;
    assert!(
        mean_se >= mean_plain - 0.02,
        "mean DPN-SE holdout {mean_se:.3} trails plain DPN {mean_plain:.3} by more than 2 points"
    );
    println!(
        "[PASS] mechanism comparison: mean holdout DPN-SE {mean_se:.3} vs DPN {mean_plain:.3} over {} seeds",
        seeds.len()
    );
}

/// Tiled image with distinct per-tile values and a mask-recovery probe, so
/// black boxes that are exact functions of the mask can be constructed.
fn tiled_image16() -> (Image, SuperpixelMap) {
    let spmap = segment_grid(16, 16, 4).unwrap();
    let mut img = Image::zeros(16, 16, 1);
    for r in 0..16 {
        for c in 0..16 {
            img.set(r, c, 0, spmap.label(r, c) as f64 / 20.0);
        }
    }
    (img, spmap)
}

fn recover_mask(perturbed: &Image, spmap: &SuperpixelMap, original: &Image) -> Vec<u8> {
    let mut seen = vec![None; spmap.segments()];
    for r in 0..perturbed.height() {
        for c in 0..perturbed.width() {
            let seg = spmap.label(r, c);
            if seen[seg].is_none() {
                seen[seg] = Some(u8::from(perturbed.get(r, c, 0) == original.get(r, c, 0)));
            }
        }
    }
    seen.into_iter().map(|b| b.unwrap()).collect()
}

#[test]
fn criterion_7_lime_fidelity() {
    let (img, spmap) = tiled_image16();
    let k = spmap.segments();

    // Linear recovery: lambda = 1e-8, n = 10K samples, tolerance 1e-3.
    let truth: Vec<f64> = (0..k).map(|i| (i as f64 - 7.5) / 400.0).collect();
    let cfg = LimeConfig {
        grid: 4,
        n_samples: 10 * k,
        sigma: 0.25,
        ridge_lambda: 1e-8,
        top_k: k,
        seed: 71,
    };
    let (original, sp) = (img.clone(), spmap.clone());
    let truth_for_model = truth.clone();
    let expl = explain(
        move |perturbed: &Image| {
            let mask = recover_mask(perturbed, &sp, &original);
            let p: f64 = 0.5
                + mask
                    .iter()
                    .zip(&truth_for_model)
                    .map(|(&b, &c)| b as f64 * c)
                    .sum::<f64>();
            vec![p, 1.0 - p]
        },
        &img,
        0,
        &cfg,
    )
    .unwrap();
    let mut max_coef_err: f64 = 0.0;
    for (&got, &want) in expl.coefficients.iter().zip(&truth) {
        max_coef_err = max_coef_err.max((got - want).abs());
    }
    assert!(max_coef_err < 1e-3, "coefficient error {max_coef_err:.2e} >= 1e-3");
    assert!(expl.normal_eq_residual < 1e-8);

    // Single-tile indicator: top-1 in 10 of 10 seeded runs, residual < 1e-8
    // on every fit.
    let mut hits = 0;
    for seed in 0..10u64 {
        let target_tile = (3 * seed as usize + 1) % k;
        let cfg = LimeConfig { grid: 4, n_samples: 200, ..LimeConfig::with_seed(seed) };
        let (original, sp) = (img.clone(), spmap.clone());
        let e = explain(
            move |perturbed: &Image| {
                let mask = recover_mask(perturbed, &sp, &original);
                let p = if mask[target_tile] == 1 { 0.9 } else { 0.1 };
                vec![p, 1.0 - p]
            },
            &img,
            0,
            &cfg,
        )
        .unwrap();
        assert!(e.normal_eq_residual < 1e-8, "seed {seed}: residual {}", e.normal_eq_residual);
        hits += usize::from(e.top_k[0] == target_tile);
    }
    assert_eq!(hits, 10, "single-tile indicator ranked top-1 only {hits}/10 times");
    println!(
        "[PASS] LIME fidelity: coefficients within {max_coef_err:.1e}, indicator top-1 {hits}/10, residuals < 1e-8"
    );
}

#[test]
fn criterion_8_augmentation() {
    // 1000 seeded draws: all exactly 224x224 with values in [0,1].
    let mut rng = stream_rng(80, 0);
    let pixels: Vec<f64> = (0..260 * 300).map(|_| rng.random_range(0.0..=1.0)).collect();
    let img = Image::new(260, 300, 1, pixels).unwrap();
    let cfg = AugmentConfig::with_seed(81);
    for counter in 0..1000u64 {
        let out = augment(&img, &cfg, counter).unwrap();
        assert_eq!((out.height(), out.width()), (224, 224), "draw {counter} wrong size");
        assert!(
            out.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "draw {counter} out of range"
        );
    }

    // Identity configuration is a pixel-exact no-op.
    let small: Vec<f64> = (0..64 * 64).map(|i| (i % 251) as f64 / 251.0).collect();
    let square = Image::new(64, 64, 1, small).unwrap();
    let id_cfg = AugmentConfig::identity(64, 82);
    let out = augment(&square, &id_cfg, 5).unwrap();
    assert_eq!(out.pixels(), square.pixels(), "identity config altered pixels");

    // Flip frequency within +-2% of 0.5 over 10,000 draws.
    let mut marker = Image::zeros(16, 16, 1);
    marker.set(0, 0, 0, 1.0);
    let mut flip_cfg = AugmentConfig::identity(16, 83);
    flip_cfg.flip_prob = 0.5;
    let mut flips = 0u32;
    for counter in 0..10_000u64 {
        let out = augment(&marker, &flip_cfg, counter).unwrap();
        flips += u32::from(out.get(0, 15, 0) == 1.0);
    }
    let freq = flips as f64 / 10_000.0;
    assert!((freq - 0.5).abs() < 0.02, "flip frequency {freq} outside 0.5 +- 0.02");
    println!(
        "[PASS] augmentation: 1000 draws at 224x224 in range, identity exact, flip frequency {freq:.4}"
    );
}

#[test]
fn criterion_9_metrics_oracle() {
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let mut rng = stream_rng(90 + seed, 0);
        let classes = rng.random_range(2..6usize);
        let n = rng.random_range(1..300usize);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let cm = ConfusionMatrix::from_labels(&truth, &preds, classes).unwrap();

        // Brute-force tally, recomputed from scratch.
        for pos in 0..classes {
            let (mut tp, mut fp, mut tn, mut fneg) = (0u64, 0u64, 0u64, 0u64);
            for (&t, &p) in truth.iter().zip(&preds) {
                match (t == pos, p == pos) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (false, false) => tn += 1,
                    (true, false) => fneg += 1,
                }
            }
            let c = cm.binary_counts(pos).unwrap();
            assert_eq!((c.true_pos, c.false_pos, c.true_neg, c.false_neg), (tp, fp, tn, fneg));
            let total = (tp + fp + tn + fneg) as f64;
            assert_eq!(dpnse_core::metrics::accuracy(&c), (tp + tn) as f64 / total);
            let expected_recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
            let expected_precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            assert_eq!(dpnse_core::metrics::recall(&c), expected_recall);
            assert_eq!(dpnse_core::metrics::precision(&c), expected_precision);
            let (p, r) = (expected_precision, expected_recall);
            let expected_f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert_eq!(dpnse_core::metrics::f1(&c), expected_f1);
        }
        let agree = truth.iter().zip(&preds).filter(|(a, b)| a == b).count();
        assert_eq!(cm.overall_accuracy().unwrap(), agree as f64 / n as f64);
        checked += 1;
    }
    println!("[PASS] metrics oracle: {checked} random label vectors match the brute-force tally exactly");
}
