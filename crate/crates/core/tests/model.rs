mod common;

use vibed_core::nn::{multi_head_attention, scaled_dot_attention, AttentionParams, TransformerConfig, TransformerEncoder};
use vibed_core::rng;
use vibed_core::{Graph, ModelConfig, ParamStore, Tensor, Variant, VibedModel};

#[test]
fn default_lstm_model_emits_four_logits() {
    let model = VibedModel::new(ModelConfig::default()).unwrap();
    let mut r = rng::seeded(1);
    let scene = common::random_tensor(&[60, 1028], 1.0, &mut r);
    let face = common::random_tensor(&[60, 1028], 1.0, &mut r);
    let logits = model.logits(&scene, &face).unwrap();
    assert_eq!(logits.shape(), [4]);
    assert!(logits.all_finite());
}

#[test]
fn default_transformer_encoder_pools_to_1024() {
    let mut store = ParamStore::new();
    let enc = TransformerEncoder::init(&mut store, "tf", 1028, TransformerConfig::default(), &mut rng::seeded(2)).unwrap();
    let seq = common::random_tensor(&[60, 1028], 1.0, &mut rng::seeded(3));
    let g = Graph::with_params(&store);
    let out = enc.encode(&g, g.constant(seq), 0.1, false, &mut rng::seeded(0)).unwrap();
    assert_eq!(g.shape(out.pooled), [1024]);
    assert_eq!(out.attention.len(), 2);
    assert_eq!(out.attention[0].len(), 8);
}

#[test]
fn variants_report_parameter_counts() {
    let lstm = VibedModel::new(ModelConfig::default()).unwrap().parameter_count();
    let tf = VibedModel::new(ModelConfig { variant: Variant::Transformer, ..ModelConfig::default() })
        .unwrap()
        .parameter_count();
    eprintln!("parameters: lstm {lstm}, transformer {tf}");
    assert_ne!(lstm, tf);
}

#[test]
fn single_head_is_plain_attention_then_output_projection() {
    let mut store = ParamStore::new();
    let p = AttentionParams::init(&mut store, "a", 4, 1, &mut rng::seeded(4)).unwrap();
    let x = common::random_tensor(&[3, 4], 1.0, &mut rng::seeded(5));
    let g = Graph::with_params(&store);
    let xv = g.constant(x);
    let ours = g.value(multi_head_attention(&g, xv, &p).unwrap().output);
    let q = g.matmul(xv, g.param(p.w_q)).unwrap();
    let k = g.matmul(xv, g.param(p.w_k)).unwrap();
    let v = g.matmul(xv, g.param(p.w_v)).unwrap();
    let att = scaled_dot_attention(&g, q, k, v).unwrap();
    let expected = g.value(g.matmul(att.output, g.param(p.w_o)).unwrap());
    assert_eq!(ours, expected);
}

#[test]
fn attention_matches_direct_formula() {
    let mut r = rng::seeded(6);
    let (q, k, v) = (
        common::random_tensor(&[3, 2], 1.0, &mut r),
        common::random_tensor(&[3, 2], 1.0, &mut r),
        common::random_tensor(&[3, 3], 1.0, &mut r),
    );
    let g = Graph::new();
    let out = g.value(scaled_dot_attention(&g, g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone())).unwrap().output);
    for i in 0..3 {
        let scores: Vec<f64> = (0..3)
            .map(|j| (q.get2(i, 0) * k.get2(j, 0) + q.get2(i, 1) * k.get2(j, 1)) / 2f64.sqrt())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for c in 0..3 {
            let want: f64 = (0..3).map(|j| scores[j].exp() / z * v.get2(j, c)).sum();
            assert!((out.get2(i, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn predicted_probabilities_sum_to_one() {
    for seed in 0..5 {
        for variant in [Variant::Lstm, Variant::Transformer] {
            let cfg = ModelConfig {
                variant,
                seq_len: 4,
                feature_dim: 6,
                hidden: 8,
                heads: 2,
                d_ff: 8,
                mlp_hidden: 8,
                pe_max_len: 8,
                seed,
                ..ModelConfig::default()
            };
            let model = VibedModel::new(cfg).unwrap();
            let mut r = rng::seeded(seed + 100);
            let p = model
                .predict(&common::random_tensor(&[4, 6], 3.0, &mut r), &common::random_tensor(&[4, 6], 3.0, &mut r))
                .unwrap();
            assert!((p.probs.sum() - 1.0).abs() < 1e-12);
            assert_eq!(p.label, p.probs.argmax());
        }
    }
}

#[test]
fn checkpoint_file_roundtrip_predicts_identically() {
    let cfg = ModelConfig { seq_len: 3, feature_dim: 4, hidden: 5, mlp_hidden: 6, seed: 9, ..ModelConfig::default() };
    let model = VibedModel::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vbnc");
    vibed_core::checkpoint::save(&model, &path).unwrap();
    let back = vibed_core::checkpoint::load(&path).unwrap();
    let x = Tensor::full(&[3, 4], 0.5);
    assert_eq!(model.logits(&x, &x).unwrap(), back.logits(&x, &x).unwrap());
    assert_eq!(back.config, model.config);
}
