//! Resolution of the training run configuration: command-line flags over
//! a `key = value` file over built-in defaults.

use std::path::Path;

use vibed_core::optim::AdamWConfig;
use vibed_core::{Error, KvMap, ModelConfig, TrainConfig, Variant};

use crate::{CliResult, TrainArgs};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.model.to_kv();
        let (t, o) = (&self.train, &self.train.optimizer);
        kv.insert("epochs", t.epochs);
        kv.insert("batch_size", t.batch_size);
        kv.insert("lr", o.lr);
        kv.insert("weight_decay", o.weight_decay);
        kv.insert("beta1", o.beta1);
        kv.insert("beta2", o.beta2);
        kv.insert("eps", o.eps);
        kv.insert("checkpoint_every", t.checkpoint_every);
        kv.insert("shuffle", t.shuffle);
        kv
    }
}

fn defaults() -> KvMap {
    RunConfig { model: ModelConfig::default(), train: TrainConfig::default() }.to_kv()
}

fn overlay(base: &mut KvMap, top: &KvMap) {
    for key in top.keys() {
        base.insert(key, top.get_str(key).unwrap_or_default());
    }
}

fn flag_values(a: &TrainArgs, variant: Variant) -> KvMap {
    let mut kv = KvMap::new();
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.insert(k, v);
        }
    };
    set("variant", a.variant.map(|v| v.to_string()));
    set("pooling", a.pooling.map(|v| v.to_string()));
    set("epochs", a.epochs.map(|v| v.to_string()));
    set("batch_size", a.batch_size.map(|v| v.to_string()));
    set("lr", a.lr.map(|v| v.to_string()));
    set("weight_decay", a.weight_decay.map(|v| v.to_string()));
    set("seed", a.seed.map(|v| v.to_string()));
    set("hidden", a.hidden.map(|v| v.to_string()));
    set("heads", a.heads.map(|v| v.to_string()));
    let layers_key = match variant {
        Variant::Lstm => "lstm_layers",
        Variant::Transformer => "transformer_layers",
    };
    set(layers_key, a.layers.map(|v| v.to_string()));
    set("d_ff", a.d_ff.map(|v| v.to_string()));
    set("mlp_hidden", a.mlp_hidden.map(|v| v.to_string()));
    set("encoder_dropout", a.dropout.map(|v| v.to_string()));
    set("mlp_dropout", a.mlp_dropout.map(|v| v.to_string()));
    set("checkpoint_every", a.checkpoint_every.map(|v| v.to_string()));
    if a.no_shuffle {
        set("shuffle", Some("false".into()));
    }
    kv
}

fn required<T: std::str::FromStr>(kv: &KvMap, key: &str) -> vibed_core::Result<T> {
    kv.get(key)?.ok_or_else(|| Error::Config(format!("missing {key}")))
}

/// Merges defaults, the optional config file and the flags. `seq_len` and
/// `feature_dim` come from the data; a file may repeat them (as a saved
/// `run_config.txt` does) only if they agree.
pub fn resolve(args: &TrainArgs, seq_len: usize, feature_dim: usize) -> CliResult<RunConfig> {
    let mut kv = defaults();
    let allowed: Vec<String> = kv.keys().map(str::to_owned).collect();
    if let Some(path) = &args.config {
        let file = read_file(path)?;
        for key in file.keys() {
            if !allowed.iter().any(|k| k == key) {
                return Err(Error::Config(format!("{}: unknown key {key:?}", path.display())).into());
            }
        }
        for (key, actual) in [("seq_len", seq_len), ("feature_dim", feature_dim)] {
            if let Some(v) = file.get::<usize>(key)? {
                if v != actual {
                    return Err(Error::Config(format!(
                        "{}: {key} = {v} but the data has {actual}",
                        path.display()
                    ))
                    .into());
                }
            }
        }
        overlay(&mut kv, &file);
    }
    // The variant decides which layer-count key `--layers` targets.
    let variant = match args.variant {
        Some(v) => v,
        None => required(&kv, "variant")?,
    };
    overlay(&mut kv, &flag_values(args, variant));
    kv.insert("seq_len", seq_len);
    kv.insert("feature_dim", feature_dim);

    let model = ModelConfig::from_kv(&kv)?;
    let train = TrainConfig {
        epochs: required(&kv, "epochs")?,
        batch_size: required(&kv, "batch_size")?,
        seed: model.seed,
        shuffle: required(&kv, "shuffle")?,
        optimizer: AdamWConfig {
            lr: required(&kv, "lr")?,
            beta1: required(&kv, "beta1")?,
            beta2: required(&kv, "beta2")?,
            eps: required(&kv, "eps")?,
            weight_decay: required(&kv, "weight_decay")?,
        },
        out_dir: Some(args.out.clone()),
        checkpoint_every: required(&kv, "checkpoint_every")?,
    };
    model.validate()?;
    train.validate()?;
    Ok(RunConfig { model, train })
}

fn read_file(path: &Path) -> CliResult<KvMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    KvMap::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}
