//! Gradient-check cases at toy sizes, shared by the gradient tests and the
//! acceptance runner. Each case returns the worst relative error.

use vibed_core::model::MlpHead;
use vibed_core::nn::{
    encoder_layer, lstm_step, multi_head_attention, AttentionParams, EncoderLayerParams, LstmEncoder, LstmParams,
    Pooling, TransformerConfig, TransformerEncoder, LAYER_NORM_EPS,
};
use vibed_core::rng::{self, SeededRng};
use vibed_core::{Graph, ModelConfig, ParamStore, Variant, VibedModel};

use super::{check_inputs, check_inputs_in, check_params, random_tensor};

pub type Case = (&'static str, fn() -> f64);

/// Moves every parameter off its structured init (unit gains, zero
/// biases) so symmetric values cannot hide a wrong gradient.
pub fn jitter(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut r = rng::seeded(seed);
    for p in store.iter_mut() {
        let noise = random_tensor(p.value.shape(), scale, &mut r);
        p.value.add_assign(&noise);
    }
}

fn r(seed: u64) -> SeededRng {
    rng::seeded(seed)
}

fn matmul() -> f64 {
    let mut g = r(1);
    let a = random_tensor(&[3, 4], 1.0, &mut g);
    let b = random_tensor(&[4, 5], 1.0, &mut g);
    check_inputs(&[a, b], |g, v| g.matmul(v[0], v[1]))
}

fn matmul_transpose_bias() -> f64 {
    let mut g = r(2);
    let a = random_tensor(&[4, 3], 1.0, &mut g);
    let b = random_tensor(&[4, 2], 1.0, &mut g);
    let bias = random_tensor(&[2], 1.0, &mut g);
    check_inputs(&[a, b, bias], |g, v| {
        let at = g.transpose(v[0])?;
        g.add_bias(g.matmul(at, v[1])?, v[2])
    })
}

fn layer_norm() -> f64 {
    let mut g = r(3);
    let x = random_tensor(&[3, 6], 2.0, &mut g);
    let gain = random_tensor(&[6], 1.5, &mut g);
    let bias = random_tensor(&[6], 1.0, &mut g);
    check_inputs(&[x, gain, bias], |g, v| g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS))
}

fn softmax() -> f64 {
    let x = random_tensor(&[3, 5], 3.0, &mut r(4));
    check_inputs(&[x], |g, v| g.softmax_rows(v[0]))
}

fn activations() -> f64 {
    let x = random_tensor(&[4, 4], 2.0, &mut r(5));
    let relu = check_inputs(std::slice::from_ref(&x), |g, v| Ok(g.relu(v[0])));
    let sigmoid = check_inputs(std::slice::from_ref(&x), |g, v| Ok(g.sigmoid(v[0])));
    let tanh = check_inputs(&[x], |g, v| Ok(g.tanh(v[0])));
    relu.max(sigmoid).max(tanh)
}

fn elementwise_and_reshaping() -> f64 {
    let mut g = r(6);
    let a = random_tensor(&[3, 4], 1.0, &mut g);
    let b = random_tensor(&[3, 4], 1.0, &mut g);
    check_inputs(&[a, b], |g, v| {
        let prod = g.mul(v[0], v[1])?;
        let sum = g.add(prod, g.scale(v[0], -0.5))?;
        let left = g.slice_cols(sum, 0, 2)?;
        let right = g.slice_cols(v[1], 1, 4)?;
        let wide = g.concat_cols(&[left, right])?;
        let stacked = g.concat_rows(&[g.row(wide, 2)?, g.row(wide, 0)?])?;
        let pooled = g.mean_rows(stacked);
        let flat = g.reshape(wide, &[15])?;
        let tail = g.slice_cols(flat, 10, 15)?;
        g.concat_cols(&[g.reshape(pooled, &[5])?, g.reshape(tail, &[5])?])
    })
}

fn three_layer_chain() -> f64 {
    let mut g = r(30);
    let x = random_tensor(&[2, 3], 1.0, &mut g);
    let w1 = random_tensor(&[3, 4], 1.0, &mut g);
    let b1 = random_tensor(&[4], 0.5, &mut g);
    let w2 = random_tensor(&[4, 4], 1.0, &mut g);
    let w3 = random_tensor(&[4, 2], 1.0, &mut g);
    check_inputs(&[x, w1, b1, w2, w3], |g, v| {
        let h1 = g.tanh(g.add_bias(g.matmul(v[0], v[1])?, v[2])?);
        let h2 = g.sigmoid(g.matmul(h1, v[3])?);
        g.softmax_rows(g.matmul(h2, v[4])?)
    })
}

fn dropout_mask() -> f64 {
    let x = random_tensor(&[3, 5], 1.0, &mut r(7));
    check_inputs(&[x], |g, v| {
        let mut rng = r(99);
        g.dropout(v[0], 0.4, true, &mut rng)
    })
}

fn cross_entropy() -> f64 {
    let logits = random_tensor(&[4], 2.0, &mut r(8));
    check_inputs(&[logits], |g, v| g.cross_entropy(v[0], 1))
}

fn average() -> f64 {
    let mut g = r(9);
    let a = random_tensor(&[4], 2.0, &mut g);
    let b = random_tensor(&[4], 2.0, &mut g);
    check_inputs(&[a, b], |g, v| {
        let l0 = g.cross_entropy(v[0], 0)?;
        let l1 = g.cross_entropy(v[1], 3)?;
        g.average(&[l0, l1])
    })
}

fn lstm_cell() -> f64 {
    let mut store = ParamStore::new();
    let p = LstmParams::init(&mut store, "cell", 5, 4, &mut r(10)).unwrap();
    jitter(&mut store, 0.3, 11);
    let mut g = r(12);
    let x = random_tensor(&[5], 1.0, &mut g);
    let h = random_tensor(&[4], 1.0, &mut g);
    let c = random_tensor(&[4], 1.0, &mut g);
    let inputs = check_inputs_in(&store, &[x.clone(), h.clone(), c.clone()], |g, v| {
        let s = lstm_step(g, v[0], v[1], v[2], &p)?;
        g.concat_cols(&[s.h, s.c])
    });
    let params = check_params(&mut store, usize::MAX, |g| {
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let s = lstm_step(g, xv, hv, cv, &p)?;
        g.concat_cols(&[s.h, s.c])
    });
    inputs.max(params)
}

fn lstm_sequence() -> f64 {
    let mut store = ParamStore::new();
    let enc = LstmEncoder::init(&mut store, "lstm", 3, 4, 2, &mut r(13)).unwrap();
    jitter(&mut store, 0.2, 14);
    let seq = random_tensor(&[4, 3], 1.0, &mut r(15));
    let inputs = check_inputs_in(&store, std::slice::from_ref(&seq), |g, v| {
        enc.encode(g, v[0], 0.0, false, &mut r(0))
    });
    let params = check_params(&mut store, usize::MAX, |g| {
        enc.encode(g, g.constant(seq.clone()), 0.0, false, &mut r(0))
    });
    inputs.max(params)
}

fn attention() -> f64 {
    let mut store = ParamStore::new();
    let p = AttentionParams::init(&mut store, "attn", 4, 2, &mut r(16)).unwrap();
    jitter(&mut store, 0.3, 17);
    let x = random_tensor(&[3, 4], 1.0, &mut r(18));
    let inputs = check_inputs_in(&store, std::slice::from_ref(&x), |g, v| {
        Ok(multi_head_attention(g, v[0], &p)?.output)
    });
    let params = check_params(&mut store, usize::MAX, |g| {
        Ok(multi_head_attention(g, g.constant(x.clone()), &p)?.output)
    });
    inputs.max(params)
}

fn encoder_block() -> f64 {
    let mut store = ParamStore::new();
    let p = EncoderLayerParams::init(&mut store, "enc", 4, 2, 8, &mut r(19)).unwrap();
    jitter(&mut store, 0.3, 20);
    let x = random_tensor(&[3, 4], 1.0, &mut r(21));
    let f = |g: &Graph<'_>, x: vibed_core::Var| {
        let mut rng = r(5);
        Ok(encoder_layer(g, x, &p, 0.25, true, &mut rng)?.output)
    };
    let inputs = check_inputs_in(&store, std::slice::from_ref(&x), |g, v| f(g, v[0]));
    let params = check_params(&mut store, usize::MAX, |g| f(g, g.constant(x.clone())));
    inputs.max(params)
}

fn transformer(pooling: Pooling) -> f64 {
    let cfg = TransformerConfig {
        n_layers: 2,
        heads: 2,
        d_model: 4,
        d_ff: 8,
        pooling,
        pe_max_len: 8,
        positional_encoding: true,
    };
    let mut store = ParamStore::new();
    let enc = TransformerEncoder::init(&mut store, "tf", 3, cfg, &mut r(22)).unwrap();
    jitter(&mut store, 0.2, 23);
    let seq = random_tensor(&[3, 3], 1.0, &mut r(24));
    check_params(&mut store, usize::MAX, |g| {
        Ok(enc.encode(g, g.constant(seq.clone()), 0.0, false, &mut r(0))?.pooled)
    })
}

fn transformer_mean() -> f64 {
    transformer(Pooling::Mean)
}

fn transformer_cls() -> f64 {
    transformer(Pooling::Cls)
}

fn mlp_head() -> f64 {
    let mut store = ParamStore::new();
    let head = MlpHead::init(&mut store, "head", 6, 5, 4, 0.3, &mut r(25));
    jitter(&mut store, 0.3, 26);
    let x = random_tensor(&[6], 1.0, &mut r(27));
    let f = |g: &Graph<'_>, x: vibed_core::Var| {
        let logits = head.forward(g, x, true, &mut r(3))?;
        g.cross_entropy(logits, 2)
    };
    let inputs = check_inputs_in(&store, std::slice::from_ref(&x), |g, v| f(g, v[0]));
    let params = check_params(&mut store, usize::MAX, |g| f(g, g.constant(x.clone())));
    inputs.max(params)
}

fn full_model(variant: Variant) -> f64 {
    let cfg = ModelConfig {
        variant,
        seq_len: 3,
        feature_dim: 4,
        hidden: 4,
        mlp_hidden: 6,
        heads: 2,
        d_ff: 8,
        pe_max_len: 8,
        ..ModelConfig::default()
    };
    let model = VibedModel::new(cfg).unwrap();
    let mut store = model.params.clone();
    jitter(&mut store, 0.2, 28);
    let mut g = r(29);
    let scene = random_tensor(&[3, 4], 1.0, &mut g);
    let face = random_tensor(&[3, 4], 1.0, &mut g);
    check_params(&mut store, 12, |g| {
        let (s, f) = (g.constant(scene.clone()), g.constant(face.clone()));
        let logits = model.forward(g, s, f, true, &mut r(4))?;
        g.cross_entropy(logits, 3)
    })
}

fn full_lstm_model() -> f64 {
    full_model(Variant::Lstm)
}

fn full_transformer_model() -> f64 {
    full_model(Variant::Transformer)
}

pub const CASES: &[Case] = &[
    ("matmul", matmul),
    ("matmul_transpose_bias", matmul_transpose_bias),
    ("layer_norm", layer_norm),
    ("softmax", softmax),
    ("relu_sigmoid_tanh", activations),
    ("elementwise_and_reshaping", elementwise_and_reshaping),
    ("three_layer_chain", three_layer_chain),
    ("dropout_mask", dropout_mask),
    ("cross_entropy", cross_entropy),
    ("batch_average", average),
    ("lstm_step", lstm_cell),
    ("lstm_encoder_two_layers", lstm_sequence),
    ("multi_head_attention", attention),
    ("encoder_layer", encoder_block),
    ("transformer_mean_pool", transformer_mean),
    ("transformer_cls_pool", transformer_cls),
    ("mlp_head", mlp_head),
    ("full_model_lstm", full_lstm_model),
    ("full_model_transformer", full_transformer_model),
];
