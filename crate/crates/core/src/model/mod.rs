//! The dual-stream classifier: independent scene and face encoders whose
//! summaries are concatenated and classified by a two-layer MLP.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{softmax_in_place, Graph, Var};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::init::uniform_fan_in;
use crate::nn::{LstmEncoder, Pooling, TransformerConfig, TransformerEncoder};
use crate::param::{ParamId, ParamStore};
use crate::rng::{seeded, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lstm,
    Transformer,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Lstm => "lstm",
            Variant::Transformer => "transformer",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Variant::Lstm),
            "transformer" => Ok(Variant::Transformer),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (lstm|transformer)"
            ))),
        }
    }
}

/// Architecture hyperparameters. Defaults are the full-size model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frames per clip.
    pub seq_len: usize,
    /// Per-frame feature width.
    pub feature_dim: usize,
    /// LSTM hidden size, or Transformer `d_model`.
    pub hidden: usize,
    pub n_classes: usize,
    pub mlp_hidden: usize,
    pub mlp_dropout: f64,
    pub encoder_dropout: f64,
    pub lstm_layers: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub pooling: Pooling,
    pub pe_max_len: usize,
    pub positional_encoding: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Lstm,
            seq_len: 60,
            feature_dim: 1028,
            hidden: 1024,
            n_classes: 4,
            mlp_hidden: 512,
            mlp_dropout: 0.3,
            encoder_dropout: 0.1,
            lstm_layers: 1,
            transformer_layers: 2,
            heads: 8,
            d_ff: 2048,
            pooling: Pooling::Mean,
            pe_max_len: 512,
            positional_encoding: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            n_layers: self.transformer_layers,
            heads: self.heads,
            d_model: self.hidden,
            d_ff: self.d_ff,
            pooling: self.pooling,
            pe_max_len: self.pe_max_len,
            positional_encoding: self.positional_encoding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be ≥ 2, got {}", self.n_classes)));
        }
        for (name, v) in [
            ("seq_len", self.seq_len),
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        for (name, r) in [("mlp_dropout", self.mlp_dropout), ("encoder_dropout", self.encoder_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        match self.variant {
            Variant::Lstm if self.lstm_layers == 0 => {
                Err(Error::Config("lstm_layers must be ≥ 1".into()))
            }
            Variant::Lstm => Ok(()),
            Variant::Transformer => self.transformer_config().validate(),
        }
    }

    /// Scalar parameters in the MLP head alone.
    pub fn head_parameter_count(&self) -> usize {
        let fused = 2 * self.hidden;
        fused * self.mlp_hidden + self.mlp_hidden + self.mlp_hidden * self.n_classes + self.n_classes
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("variant", self.variant);
        kv.insert("seq_len", self.seq_len);
        kv.insert("feature_dim", self.feature_dim);
        kv.insert("hidden", self.hidden);
        kv.insert("n_classes", self.n_classes);
        kv.insert("mlp_hidden", self.mlp_hidden);
        kv.insert("mlp_dropout", self.mlp_dropout);
        kv.insert("encoder_dropout", self.encoder_dropout);
        kv.insert("lstm_layers", self.lstm_layers);
        kv.insert("transformer_layers", self.transformer_layers);
        kv.insert("heads", self.heads);
        kv.insert("d_ff", self.d_ff);
        kv.insert("pooling", self.pooling);
        kv.insert("pe_max_len", self.pe_max_len);
        kv.insert("positional_encoding", self.positional_encoding);
        kv.insert("seed", self.seed);
        kv
    }

    /// Reads every key [`to_kv`](Self::to_kv) writes; missing keys fall back
    /// to defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            variant: kv.get("variant")?.unwrap_or(d.variant),
            seq_len: kv.get("seq_len")?.unwrap_or(d.seq_len),
            feature_dim: kv.get("feature_dim")?.unwrap_or(d.feature_dim),
            hidden: kv.get("hidden")?.unwrap_or(d.hidden),
            n_classes: kv.get("n_classes")?.unwrap_or(d.n_classes),
            mlp_hidden: kv.get("mlp_hidden")?.unwrap_or(d.mlp_hidden),
            mlp_dropout: kv.get("mlp_dropout")?.unwrap_or(d.mlp_dropout),
            encoder_dropout: kv.get("encoder_dropout")?.unwrap_or(d.encoder_dropout),
            lstm_layers: kv.get("lstm_layers")?.unwrap_or(d.lstm_layers),
            transformer_layers: kv.get("transformer_layers")?.unwrap_or(d.transformer_layers),
            heads: kv.get("heads")?.unwrap_or(d.heads),
            d_ff: kv.get("d_ff")?.unwrap_or(d.d_ff),
            pooling: kv.get("pooling")?.unwrap_or(d.pooling),
            pe_max_len: kv.get("pe_max_len")?.unwrap_or(d.pe_max_len),
            positional_encoding: kv.get("positional_encoding")?.unwrap_or(d.positional_encoding),
            seed: kv.get("seed")?.unwrap_or(d.seed),
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub enum StreamEncoder {
    Lstm(LstmEncoder),
    Transformer(TransformerEncoder),
}

impl StreamEncoder {
    fn init(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        Ok(match cfg.variant {
            Variant::Lstm => StreamEncoder::Lstm(LstmEncoder::init(
                store,
                &format!("{prefix}.lstm"),
                cfg.feature_dim,
                cfg.hidden,
                cfg.lstm_layers,
                rng,
            )?),
            Variant::Transformer => StreamEncoder::Transformer(TransformerEncoder::init(
                store,
                &format!("{prefix}.transformer"),
                cfg.feature_dim,
                cfg.transformer_config(),
                rng,
            )?),
        })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            StreamEncoder::Lstm(e) => e.output_dim(),
            StreamEncoder::Transformer(e) => e.output_dim(),
        }
    }

    pub fn encode(
        &self,
        g: &Graph<'_>,
        seq: Var,
        dropout: f64,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        match self {
            StreamEncoder::Lstm(e) => e.encode(g, seq, dropout, training, rng),
            StreamEncoder::Transformer(e) => Ok(e.encode(g, seq, dropout, training, rng)?.pooled),
        }
    }
}

/// `W2ᵀ · dropout(relu(W1ᵀ x + b1)) + b2`.
#[derive(Debug, Clone)]
pub struct MlpHead {
    /// `input × hidden`
    pub w1: ParamId,
    pub b1: ParamId,
    /// `hidden × classes`
    pub w2: ParamId,
    pub b2: ParamId,
    pub dropout: f64,
}

impl MlpHead {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        dropout: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let w1 = store.add(format!("{prefix}.w1"), uniform_fan_in(&[input, hidden], input, rng), true);
        let b1 = store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]), false);
        let w2 = store.add(format!("{prefix}.w2"), uniform_fan_in(&[hidden, classes], hidden, rng), true);
        let b2 = store.add(format!("{prefix}.b2"), Tensor::zeros(&[classes]), false);
        Self {
            w1,
            b1,
            w2,
            b2,
            dropout,
        }
    }

    pub fn forward(&self, g: &Graph<'_>, x: Var, training: bool, rng: &mut SeededRng) -> Result<Var> {
        let x = g.as_row(x)?;
        let h = g.relu(g.add_bias(g.matmul(x, g.param(self.w1))?, g.param(self.b1))?);
        let h = g.dropout(h, self.dropout, training, rng)?;
        let logits = g.add_bias(g.matmul(h, g.param(self.w2))?, g.param(self.b2))?;
        let classes = g.shape(logits)[1];
        g.reshape(logits, &[classes])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probs: Tensor,
}

#[derive(Debug, Clone)]
pub struct VibedModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub scene: StreamEncoder,
    pub face: StreamEncoder,
    pub head: MlpHead,
}

impl VibedModel {
    /// Builds and initializes a model from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let mut params = ParamStore::new();
        let scene = StreamEncoder::init(&mut params, "scene", &config, &mut rng)?;
        let face = StreamEncoder::init(&mut params, "face", &config, &mut rng)?;
        let fused = scene.output_dim() + face.output_dim();
        let head = MlpHead::init(
            &mut params,
            "head",
            fused,
            config.mlp_hidden,
            config.n_classes,
            config.mlp_dropout,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            scene,
            face,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_stream(&self, which: &str, shape: &[usize]) -> Result<()> {
        let expected = [self.config.seq_len, self.config.feature_dim];
        if shape != expected {
            return Err(Error::Shape {
                op: "forward",
                message: format!(
                    "{which} stream is {shape:?}, model expects {expected:?} (T × D)"
                ),
            });
        }
        Ok(())
    }

    /// Logits for one clip. Both streams must be `seq_len × feature_dim`.
    /// The graph must read from `self.params`.
    pub fn forward(
        &self,
        g: &Graph<'_>,
        scene: Var,
        face: Var,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        self.check_stream("scene", &g.shape(scene))?;
        self.check_stream("face", &g.shape(face))?;
        let dropout = self.config.encoder_dropout;
        let s = self.scene.encode(g, scene, dropout, training, rng)?;
        let f = self.face.encode(g, face, dropout, training, rng)?;
        let fused = g.concat_cols(&[s, f])?;
        self.head.forward(g, fused, training, rng)
    }

    /// Eval-mode logits without keeping a graph around.
    pub fn logits(&self, scene: &Tensor, face: &Tensor) -> Result<Tensor> {
        let g = Graph::with_params(&self.params);
        let (s, f) = (g.constant(scene.clone()), g.constant(face.clone()));
        // Eval mode never draws from the generator.
        let mut rng = seeded(0);
        let logits = self.forward(&g, s, f, false, &mut rng)?;
        Ok(g.value(logits))
    }

    pub fn predict(&self, scene: &Tensor, face: &Tensor) -> Result<Prediction> {
        Ok(prediction_from_logits(&self.logits(scene, face)?))
    }
}

/// Softmax probabilities and the argmax label (lowest index on ties).
pub fn prediction_from_logits(logits: &Tensor) -> Prediction {
    let mut probs = logits.clone();
    softmax_in_place(probs.data_mut());
    Prediction {
        label: logits.argmax(),
        probs,
    }
}
