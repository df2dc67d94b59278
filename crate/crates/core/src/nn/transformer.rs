//! Post-norm Transformer encoder with sinusoidal positions and mean or
//! CLS-token pooling.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::attention::{multi_head_attention, AttentionParams};
use crate::nn::init::uniform_fan_in;
use crate::nn::positional::positional_encoding;
use crate::nn::LAYER_NORM_EPS;
use crate::param::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Cls,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Cls => "cls",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "cls" => Ok(Pooling::Cls),
            other => Err(Error::Config(format!("unknown pooling {other:?} (mean|cls)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub pooling: Pooling,
    /// Longest sequence (including a CLS token) the positional table covers.
    pub pe_max_len: usize,
    pub positional_encoding: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            heads: 8,
            d_model: 1024,
            d_ff: 2048,
            pooling: Pooling::Mean,
            pe_max_len: 512,
            positional_encoding: true,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("transformer needs at least one layer".into()));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be ≥ 1".into()));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.heads
            )));
        }
        if self.positional_encoding && !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "positional encoding needs an even d_model, got {}",
                self.d_model
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    /// `d_model × d_ff`
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    /// `d_ff × d_model`
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    pub d_ff: usize,
}

impl EncoderLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_ff == 0 {
            return Err(Error::Config("d_ff must be ≥ 1".into()));
        }
        let attn = AttentionParams::init(store, &format!("{prefix}.attn"), d_model, heads, rng)?;
        let ffn_w1 = store.add(
            format!("{prefix}.ffn.w1"),
            uniform_fan_in(&[d_model, d_ff], d_model, rng),
            true,
        );
        let ffn_b1 = store.add(format!("{prefix}.ffn.b1"), Tensor::zeros(&[d_ff]), false);
        let ffn_w2 = store.add(
            format!("{prefix}.ffn.w2"),
            uniform_fan_in(&[d_ff, d_model], d_ff, rng),
            true,
        );
        let ffn_b2 = store.add(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d_model]), false);
        let mut norm = |name: &str, value: f64| {
            store.add(
                format!("{prefix}.{name}"),
                Tensor::full(&[d_model], value),
                false,
            )
        };
        Ok(Self {
            attn,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            norm1_gain: norm("norm1.gain", 1.0),
            norm1_bias: norm("norm1.bias", 0.0),
            norm2_gain: norm("norm2.gain", 1.0),
            norm2_bias: norm("norm2.bias", 0.0),
            d_ff,
        })
    }
}

pub struct EncoderLayerOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// `x₁ = LN(x + Dropout(MHA(x)))`, `out = LN(x₁ + Dropout(FFN(x₁)))`.
pub fn encoder_layer(
    g: &Graph<'_>,
    x: Var,
    p: &EncoderLayerParams,
    dropout: f64,
    training: bool,
    rng: &mut SeededRng,
) -> Result<EncoderLayerOutput> {
    let mha = multi_head_attention(g, x, &p.attn)?;
    let attended = g.dropout(mha.output, dropout, training, rng)?;
    let x1 = g.layer_norm(
        g.add(x, attended)?,
        g.param(p.norm1_gain),
        g.param(p.norm1_bias),
        LAYER_NORM_EPS,
    )?;

    let hidden = g.relu(g.add_bias(g.matmul(x1, g.param(p.ffn_w1))?, g.param(p.ffn_b1))?);
    let ffn = g.add_bias(g.matmul(hidden, g.param(p.ffn_w2))?, g.param(p.ffn_b2))?;
    let ffn = g.dropout(ffn, dropout, training, rng)?;
    let output = g.layer_norm(
        g.add(x1, ffn)?,
        g.param(p.norm2_gain),
        g.param(p.norm2_bias),
        LAYER_NORM_EPS,
    )?;
    Ok(EncoderLayerOutput {
        output,
        attention: mha.head_weights,
    })
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub config: TransformerConfig,
    pub input_dim: usize,
    /// `D × d_model`
    pub input_proj: ParamId,
    pub cls_token: Option<ParamId>,
    pub layers: Vec<EncoderLayerParams>,
}

pub struct TransformerOutput {
    /// `d_model` summary vector.
    pub pooled: Var,
    /// Per-position outputs of the last layer (CLS row first under CLS
    /// pooling).
    pub tokens: Var,
    /// `attention[layer][head]`.
    pub attention: Vec<Vec<Var>>,
}

impl TransformerEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        config: TransformerConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be ≥ 1".into()));
        }
        let d = config.d_model;
        let input_proj = store.add(
            format!("{prefix}.input_proj"),
            uniform_fan_in(&[input_dim, d], input_dim, rng),
            true,
        );
        let cls_token = (config.pooling == Pooling::Cls).then(|| {
            store.add(format!("{prefix}.cls"), uniform_fan_in(&[d], d, rng), false)
        });
        let layers = (0..config.n_layers)
            .map(|l| {
                EncoderLayerParams::init(
                    store,
                    &format!("{prefix}.layer{l}"),
                    d,
                    config.heads,
                    config.d_ff,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            input_dim,
            input_proj,
            cls_token,
            layers,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_model
    }

    pub fn encode(
        &self,
        g: &Graph<'_>,
        seq: Var,
        dropout: f64,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<TransformerOutput> {
        let shape = g.shape(seq);
        if shape.len() != 2 {
            return Err(Error::shape("transformer_encode", format!("expected T × D, got {shape:?}")));
        }
        let steps = shape[0];
        if steps == 0 {
            return Err(Error::EmptySequence("transformer_encode".into()));
        }
        if shape[1] != self.input_dim {
            return Err(Error::dim("transformer_encode", &shape, &[steps, self.input_dim]));
        }
        let total = steps + usize::from(self.cls_token.is_some());
        if total > self.config.pe_max_len {
            return Err(Error::Config(format!(
                "sequence of {total} positions exceeds pe_max_len {}",
                self.config.pe_max_len
            )));
        }

        let mut x = g.matmul(seq, g.param(self.input_proj))?;
        if let Some(cls) = self.cls_token {
            let cls = g.as_row(g.param(cls))?;
            x = g.concat_rows(&[cls, x])?;
        }
        if self.config.positional_encoding {
            let pe = g.constant(positional_encoding(total, self.config.d_model)?);
            x = g.add(x, pe)?;
        }
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out = encoder_layer(g, x, layer, dropout, training, rng)?;
            x = out.output;
            attention.push(out.attention);
        }
        let pooled = match self.config.pooling {
            Pooling::Mean => g.mean_rows(x),
            Pooling::Cls => g.row(x, 0)?,
        };
        Ok(TransformerOutput {
            pooled: g.reshape(pooled, &[self.config.d_model])?,
            tokens: x,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn toy(pooling: Pooling) -> TransformerConfig {
        TransformerConfig {
            n_layers: 2,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            pooling,
            pe_max_len: 16,
            positional_encoding: true,
        }
    }

    #[test]
    fn single_position_mean_pool_is_that_position() {
        let mut store = ParamStore::new();
        let enc = TransformerEncoder::init(&mut store, "t", 3, toy(Pooling::Mean), &mut seeded(2)).unwrap();
        let g = Graph::with_params(&store);
        let seq = g.constant(Tensor::from_rows(&[[0.5, -1.0, 2.0]]).unwrap());
        let out = enc.encode(&g, seq, 0.1, false, &mut seeded(0)).unwrap();
        assert_eq!(g.value(out.pooled).data(), g.value(out.tokens).data());
    }

    #[test]
    fn zero_sublayers_reduce_to_double_norm() {
        let mut store = ParamStore::new();
        let p = EncoderLayerParams::init(&mut store, "l", 4, 2, 6, &mut seeded(1)).unwrap();
        for id in [p.attn.w_q, p.attn.w_k, p.attn.w_v, p.attn.w_o, p.ffn_w1, p.ffn_w2] {
            store.get_mut(id).value.fill(0.0);
        }
        let x = Tensor::from_rows(&[[1.0, 3.0, -2.0, 0.5], [0.0, 2.0, 2.0, 4.0]]).unwrap();
        let g = Graph::with_params(&store);
        let xv = g.constant(x);
        let out = encoder_layer(&g, xv, &p, 0.0, false, &mut seeded(0)).unwrap();
        let ones = g.constant(Tensor::full(&[4], 1.0));
        let zeros = g.constant(Tensor::zeros(&[4]));
        let once = g.layer_norm(xv, ones, zeros, LAYER_NORM_EPS).unwrap();
        let twice = g.layer_norm(once, ones, zeros, LAYER_NORM_EPS).unwrap();
        assert!(g.value(out.output).max_abs_diff(&g.value(twice)) < 1e-12);
        assert_eq!(g.shape(out.output), vec![2, 4]);
    }

    #[test]
    fn cls_pooling_needs_room_in_positional_table() {
        let mut cfg = toy(Pooling::Cls);
        cfg.pe_max_len = 4;
        let mut store = ParamStore::new();
        let enc = TransformerEncoder::init(&mut store, "t", 3, cfg, &mut seeded(2)).unwrap();
        let g = Graph::with_params(&store);
        let ok = g.constant(Tensor::zeros(&[3, 3]));
        assert!(enc.encode(&g, ok, 0.0, false, &mut seeded(0)).is_ok());
        let too_long = g.constant(Tensor::zeros(&[4, 3]));
        assert!(matches!(
            enc.encode(&g, too_long, 0.0, false, &mut seeded(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cls_pooling_reads_first_row() {
        let mut store = ParamStore::new();
        let enc = TransformerEncoder::init(&mut store, "t", 3, toy(Pooling::Cls), &mut seeded(4)).unwrap();
        let g = Graph::with_params(&store);
        let seq = g.constant(Tensor::full(&[5, 3], 0.3));
        let out = enc.encode(&g, seq, 0.0, false, &mut seeded(0)).unwrap();
        let tokens = g.value(out.tokens);
        assert_eq!(tokens.shape(), &[6, 8]);
        assert_eq!(g.value(out.pooled).data(), tokens.row(0));
    }

    #[test]
    fn pooling_parses() {
        assert_eq!("cls".parse::<Pooling>().unwrap(), Pooling::Cls);
        assert!("max".parse::<Pooling>().is_err());
    }
}
