//! Dual-stream engagement classifier over precomputed per-frame feature
//! sequences: reverse-mode autodiff on dense f64 tensors, LSTM and
//! Transformer stream encoders, a fused MLP head, AdamW training,
//! macro-averaged evaluation and the on-disk sample and checkpoint
//! formats.

pub mod autodiff;
mod binio;
pub mod dataset;
pub mod error;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use dataset::{
    gen_synthetic, load_dataset, read_sample, validate_dataset, write_sample, Dataset, FeatureSequence, Sample,
    Split, SynthConfig, ValidationReport, CLASS_NAMES, NUM_CLASSES,
};
pub use error::{Error, Result};
pub use kv::KvMap;
pub use metrics::{confusion, per_class, report, ClassMetrics, ConfusionMatrix, EvalReport, ReportFormat};
pub use model::{checkpoint, ModelConfig, Prediction, Variant, VibedModel};
pub use nn::{Pooling, TransformerConfig};
pub use optim::{AdamW, AdamWConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochControl, EpochRecord, Evaluation, TrainConfig, TrainingLog};
