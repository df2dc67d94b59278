//! Analytic gradients against central finite differences, layer by layer.

mod common;

use common::grads::CASES;
use common::GRAD_TOL;

fn run(name: &str) {
    let (_, case) = CASES.iter().find(|(n, _)| *n == name).expect("known case");
    let err = case();
    assert!(err < GRAD_TOL, "{name}: max relative error {err:e}");
}

macro_rules! grad_tests {
    ($($name:ident),* $(,)?) => {
        $(#[test] fn $name() { run(stringify!($name)); })*

        #[test]
        fn every_case_has_a_test() {
            let listed = [$(stringify!($name)),*];
            for (n, _) in CASES {
                assert!(listed.contains(n), "case {n} has no test");
            }
        }
    };
}

grad_tests!(
    matmul,
    matmul_transpose_bias,
    layer_norm,
    softmax,
    relu_sigmoid_tanh,
    elementwise_and_reshaping,
    three_layer_chain,
    dropout_mask,
    cross_entropy,
    batch_average,
    lstm_step,
    lstm_encoder_two_layers,
    multi_head_attention,
    encoder_layer,
    transformer_mean_pool,
    transformer_cls_pool,
    mlp_head,
    full_model_lstm,
    full_model_transformer,
);
