//! Structural and equivalence properties of the dual-path SE network:
//! channel accounting, SE gating behavior, and DPN/DPN-SE agreement under
//! rigged gates.

use dpnse_core::net::{se_block, DpnSeConfig, Model, SeParams, StageConfig};
use dpnse_core::rng::stream_rng;
use dpnse_core::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_batch(n: usize, c: usize, s: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 1);
    let data: Vec<f64> = (0..n * c * s * s).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::new(vec![n, c, s, s], data).unwrap()
}

// ---- squeeze-excitation ----

#[test]
fn se_zero_weights_halve_the_input() {
    let x = random_batch(2, 3, 4, 11);
    let p = SeParams::zeros(3, 4);
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let out = p.apply(&mut g, xi, false).unwrap();
    for (&o, &i) in g.data(out).iter().zip(x.data()) {
        assert_eq!(o, 0.5 * i);
    }
}

#[test]
fn se_saturated_gate_passes_input_through() {
    // Pre-sigmoid +20 on every channel: gate = sigmoid(20), off by < 1e-8.
    let x = random_batch(1, 2, 3, 12);
    let mut p = SeParams::zeros(2, 2);
    p.b2 = Tensor::full(vec![2], 20.0);
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let out = p.apply(&mut g, xi, false).unwrap();
    for (&o, &i) in g.data(out).iter().zip(x.data()) {
        assert!((o - i).abs() < 1e-8);
    }
}

#[test]
fn se_two_channel_numeric_oracle() {
    // 1 sample, 2 channels of 2x2; hand-evaluated squeeze/excite/scale.
    let x = Tensor::new(
        vec![1, 2, 2, 2],
        vec![0.1, 0.2, 0.3, 0.4, 0.8, 0.6, 0.4, 0.2],
    )
    .unwrap();
    // hidden width 1: w1 [2,1], w2 [1,2].
    let w1 = Tensor::new(vec![2, 1], vec![0.5, -0.25]).unwrap();
    let b1 = Tensor::new(vec![1], vec![0.1]).unwrap();
    let w2 = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
    let b2 = Tensor::new(vec![2], vec![0.2, -0.1]).unwrap();

    // Squeeze: channel means.
    let s = [0.25f64, 0.5f64];
    // Excite: relu(s . w1 + b1) -> hidden, then sigmoid(hidden . w2 + b2).
    let h = (s[0] * 0.5 + s[1] * (-0.25) + 0.1).max(0.0);
    let z = [
        1.0 / (1.0 + (-(h * 1.5 + 0.2)).exp()),
        1.0 / (1.0 + (-(h * (-2.0) - 0.1)).exp()),
    ];

    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let w1 = g.constant(w1);
    let b1 = g.constant(b1);
    let w2 = g.constant(w2);
    let b2 = g.constant(b2);
    let out = se_block(&mut g, xi, w1, b1, w2, b2).unwrap();
    for c in 0..2 {
        for s_idx in 0..4 {
            let got = g.data(out)[c * 4 + s_idx];
            let want = z[c] * x.data()[c * 4 + s_idx];
            assert!((got - want).abs() < 1e-12, "channel {c} pixel {s_idx}");
        }
    }
}

#[test]
fn se_output_is_scalar_multiple_per_channel_with_gate_in_unit_interval() {
    let mut rng = stream_rng(13, 0);
    let x = random_batch(2, 5, 3, 13);
    let p = SeParams::init(5, 2, &mut rng).unwrap();
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let out = p.apply(&mut g, xi, false).unwrap();
    assert_eq!(g.shape(out), x.shape());
    let hw = 9;
    for nc in 0..2 * 5 {
        let xs = &x.data()[nc * hw..(nc + 1) * hw];
        let os = &g.data(out)[nc * hw..(nc + 1) * hw];
        // Recover the gate from the first nonzero pixel.
        let (i0, &x0) = xs
            .iter()
            .enumerate()
            .find(|(_, &v)| v.abs() > 1e-9)
            .expect("random pixels are nonzero");
        let z = os[i0] / x0;
        assert!(z > 0.0 && z < 1.0, "gate {z} outside (0,1)");
        for (o, xv) in os.iter().zip(xs) {
            assert!((o - z * xv).abs() < 1e-12);
        }
    }
}

// ---- DPN vs DPN-SE equivalence ----

/// Copies every non-SE parameter of `src` into `dst` (names must match).
fn copy_shared_weights(dst: &mut Model, src: &Model) {
    let names: Vec<String> = src.params().keys().cloned().collect();
    for name in names {
        let tensor = src.param(&name).unwrap().clone();
        *dst.param_mut(&name).expect("shared parameter exists in SE model") = tensor;
    }
}

#[test]
fn rigged_gates_make_dpnse_bit_identical_to_dpn() {
    let mut cfg = DpnSeConfig::toy();
    cfg.input_size = 32;
    let mut plain_cfg = cfg.clone();
    plain_cfg.se_enabled = false;

    let plain = Model::new(plain_cfg, 5).unwrap();
    let mut se = Model::new(cfg, 6).unwrap();
    copy_shared_weights(&mut se, &plain);
    // Saturate every gate: w2 = 0, b2 large enough that exp(-b2)
    // underflows, making sigmoid exactly 1.0.
    let se_names: Vec<String> = se
        .params()
        .keys()
        .filter(|n| n.contains(".se."))
        .cloned()
        .collect();
    for name in &se_names {
        let t = se.param_mut(name).unwrap();
        let value = if name.ends_with(".b2") { 1000.0 } else { 0.0 };
        for v in t.data_mut() {
            *v = value;
        }
    }

    let batch = random_batch(2, 1, 32, 21);
    let mut g1 = Graph::new();
    let out_plain = plain.forward_eval(&mut g1, &batch).unwrap();
    let mut g2 = Graph::new();
    let out_se = se.forward_eval(&mut g2, &batch).unwrap();
    let bits_plain: Vec<u64> = g1.data(out_plain).iter().map(|v| v.to_bits()).collect();
    let bits_se: Vec<u64> = g2.data(out_se).iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_plain, bits_se);
}

#[test]
fn se_parameter_count_difference_matches_formula() {
    let cfg = DpnSeConfig::toy();
    let mut plain_cfg = cfg.clone();
    plain_cfg.se_enabled = false;
    let with_se = Model::new(cfg.clone(), 1).unwrap();
    let without = Model::new(plain_cfg, 1).unwrap();

    let mut expected_extra = 0usize;
    for st in &cfg.stages {
        for i in 1..=st.substages {
            let c = st.residual_width + i * st.dense_increment;
            let h = (c / cfg.se_reduction).max(1);
            expected_extra += c * h + h + h * c + c;
        }
    }
    assert_eq!(with_se.param_count(), without.param_count() + expected_extra);
}

// ---- substage structure ----

#[test]
fn zeroed_bottleneck_with_no_dense_growth_is_identity() {
    // Stage 1 has two substages with k = 0; zeroing the second substage's
    // bottleneck must make its output equal its input exactly.
    let cfg = DpnSeConfig {
        input_channels: 1,
        input_size: 32,
        stem_channels: 4,
        stages: vec![
            StageConfig { substages: 2, residual_width: 4, dense_increment: 0, bottleneck_width: 2, stride: 1 },
            StageConfig { substages: 1, residual_width: 4, dense_increment: 1, bottleneck_width: 2, stride: 2 },
            StageConfig { substages: 1, residual_width: 4, dense_increment: 1, bottleneck_width: 2, stride: 1 },
            StageConfig { substages: 1, residual_width: 4, dense_increment: 1, bottleneck_width: 2, stride: 2 },
        ],
        se_enabled: false,
        se_reduction: 4,
        num_classes: 4,
        batch_norm: true,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    };
    let mut model = Model::new(cfg, 3).unwrap();
    for name in ["s0.b1.conv1.w", "s0.b1.conv2.w", "s0.b1.conv3.w"] {
        for v in model.param_mut(name).unwrap().data_mut() {
            *v = 0.0;
        }
    }
    let batch = random_batch(1, 1, 32, 33);
    let mut g = Graph::new();
    let (_, trace) = model.forward_eval_traced(&mut g, &batch).unwrap();
    let sub0 = trace.iter().find(|r| r.stage == 0 && r.substage == 0).unwrap();
    let sub1 = trace.iter().find(|r| r.stage == 0 && r.substage == 1).unwrap();
    assert_eq!(g.data(sub0.output), g.data(sub1.output));
}

#[test]
fn single_substage_channel_count_is_forced() {
    // C_r = 4, C_d = 0, k = 2: output has 6 channels.
    let mut cfg = DpnSeConfig::toy();
    cfg.input_size = 32;
    cfg.stages[0] = StageConfig {
        substages: 1,
        residual_width: 4,
        dense_increment: 2,
        bottleneck_width: 2,
        stride: 1,
    };
    let model = Model::new(cfg, 4).unwrap();
    let batch = random_batch(1, 1, 32, 44);
    let mut g = Graph::new();
    let (_, trace) = model.forward_eval_traced(&mut g, &batch).unwrap();
    assert_eq!(g.shape(trace[0].output)[1], 6);
}

#[test]
fn stacked_substages_grow_dense_path_linearly() {
    // Three substages with k = 2 from C_d = 0: dense width 6, total C_r + 6.
    let mut cfg = DpnSeConfig::toy();
    cfg.input_size = 32;
    cfg.stages[0] = StageConfig {
        substages: 3,
        residual_width: 8,
        dense_increment: 2,
        bottleneck_width: 4,
        stride: 1,
    };
    let model = Model::new(cfg, 4).unwrap();
    let batch = random_batch(1, 1, 32, 45);
    let mut g = Graph::new();
    let (_, trace) = model.forward_eval_traced(&mut g, &batch).unwrap();
    let widths: Vec<usize> = trace
        .iter()
        .filter(|r| r.stage == 0)
        .map(|r| g.shape(r.output)[1])
        .collect();
    assert_eq!(widths, vec![10, 12, 14]);
}

// ---- classifier head ----

#[test]
fn zeroed_head_predicts_uniform_probabilities() {
    let mut cfg = DpnSeConfig::toy();
    cfg.input_size = 32;
    let mut model = Model::new(cfg, 9).unwrap();
    for name in ["head.w", "head.b"] {
        for v in model.param_mut(name).unwrap().data_mut() {
            *v = 0.0;
        }
    }
    let batch = random_batch(3, 1, 32, 55);
    let probs = model.predict(&batch).unwrap();
    assert!(probs.data().iter().all(|&p| p == 0.25));
}

#[test]
fn probabilities_sum_to_one() {
    let mut cfg = DpnSeConfig::toy();
    cfg.input_size = 32;
    let model = Model::new(cfg, 10).unwrap();
    let batch = random_batch(4, 1, 32, 66);
    let probs = model.predict(&batch).unwrap();
    for row in probs.data().chunks_exact(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn wrong_input_size_is_input_error() {
    let model = Model::new(DpnSeConfig::toy(), 1).unwrap();
    let batch = random_batch(1, 1, 32, 77);
    assert!(model.predict(&batch).is_err());
}

#[test]
fn toy_forward_shape_is_batch_by_classes() {
    let model = Model::new(DpnSeConfig::toy(), 2).unwrap();
    let batch = random_batch(2, 1, 64, 88);
    let probs = model.predict(&batch).unwrap();
    assert_eq!(probs.shape(), &[2, 4]);
}

// ---- randomized channel accounting ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn channel_recurrence_holds_for_random_configs(
        seed in 0u64..1000,
        substages in proptest::collection::vec(1usize..4, 4),
        widths in proptest::collection::vec(1usize..9, 4),
        increments in proptest::collection::vec(0usize..4, 4),
        bottlenecks in proptest::collection::vec(1usize..5, 4),
        strides in proptest::collection::vec(1usize..3, 4),
    ) {
        let stages: Vec<StageConfig> = (0..4)
            .map(|i| StageConfig {
                substages: substages[i],
                residual_width: widths[i],
                dense_increment: increments[i],
                bottleneck_width: bottlenecks[i],
                stride: strides[i],
            })
            .collect();
        let cfg = DpnSeConfig {
            input_channels: 1,
            input_size: 32,
            stem_channels: 3,
            stages,
            se_enabled: seed % 2 == 0,
            se_reduction: 2,
            num_classes: 3,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        };
        prop_assume!(cfg.validate().is_ok());
        let model = Model::new(cfg.clone(), seed).unwrap();
        let batch = random_batch(1, 1, 32, seed);
        let mut g = Graph::new();
        let (_, trace) = model.forward_eval_traced(&mut g, &batch).unwrap();
        for rec in &trace {
            let st = &cfg.stages[rec.stage];
            let expected = st.residual_width + (rec.substage + 1) * st.dense_increment;
            prop_assert_eq!(g.shape(rec.output)[1], expected);
        }
    }
}
