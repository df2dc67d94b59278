//! Temporal encoders: an LSTM stack and a Transformer encoder stack, each
//! summarizing a `T × D` feature sequence into one vector.

pub mod attention;
pub mod init;
pub mod lstm;
pub mod positional;
pub mod transformer;

pub use attention::{multi_head_attention, scaled_dot_attention, Attention, AttentionParams, MultiHead};
pub use lstm::{lstm_step, LstmEncoder, LstmParams, LstmStep};
pub use positional::positional_encoding;
pub use transformer::{
    encoder_layer, EncoderLayerOutput, EncoderLayerParams, Pooling, TransformerConfig,
    TransformerEncoder, TransformerOutput,
};

/// Epsilon used by every layer normalization in the encoders.
pub const LAYER_NORM_EPS: f64 = 1e-5;
