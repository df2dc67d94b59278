//! Mini-batch training and evaluation loops.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::binio::write_file;
use crate::dataset::{Dataset, Sample, SampleHandle, Split};
use crate::error::{Error, Result};
use crate::loss::batch_loss;
use crate::model::{checkpoint, VibedModel};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng;

pub const TRAINING_LOG_FILE: &str = "training_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.vbnc";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.vbnc")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds shuffling and dropout. Initialization uses the model seed.
    pub seed: u64,
    pub shuffle: bool,
    pub optimizer: AdamWConfig,
    /// Where checkpoints and the training log go. `None` keeps the run in
    /// memory.
    pub out_dir: Option<PathBuf>,
    /// Save `epoch_XXXX.vbnc` every this many epochs; the last epoch is
    /// always saved. 0 saves only the last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 40,
            seed: 0,
            shuffle: true,
            optimizer: AdamWConfig::default(),
            out_dir: None,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let epochs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { epochs })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    /// Epoch with the highest validation accuracy; ties go to the later
    /// epoch. Without validation, the last epoch.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for r in &self.epochs {
            if let Some(acc) = r.val_accuracy {
                if best.is_none_or(|(b, _)| acc >= b) {
                    best = Some((acc, r.epoch));
                }
            }
        }
        best.map(|(_, e)| e).or_else(|| self.epochs.last().map(|r| r.epoch))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Mean loss, accuracy and per-sample outcomes over a set of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
}

/// Eval-mode pass over `handles`. Errors on an empty set.
pub fn evaluate(model: &VibedModel, handles: &[&SampleHandle]) -> Result<Evaluation> {
    if handles.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let mut total = 0.0;
    let mut truth = Vec::with_capacity(handles.len());
    let mut predicted = Vec::with_capacity(handles.len());
    for h in handles {
        let s = h.load()?;
        let (scene, face) = s.tensors()?;
        let logits = model.logits(&scene, &face)?;
        let g = Graph::new();
        let l = g.leaf(logits.clone());
        let loss = g.cross_entropy(l, s.label)?;
        total += g.value(loss).item();
        truth.push(s.label);
        predicted.push(logits.argmax());
    }
    let correct = truth.iter().zip(&predicted).filter(|(a, b)| a == b).count();
    Ok(Evaluation {
        loss: total / handles.len() as f64,
        accuracy: correct as f64 / handles.len() as f64,
        truth,
        predicted,
    })
}

/// Trains `model` on the train split, evaluating on the val split after
/// every epoch. `hook` sees each record and may stop the run early.
pub fn train(
    model: &mut VibedModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut hook: impl FnMut(&EpochRecord, &VibedModel) -> EpochControl,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let train_set = dataset.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Contract("train split is empty".into()));
    }
    let val_set = dataset.split(Split::Val);
    // Loaded once; file-backed datasets would otherwise re-read every epoch.
    let train_samples: Vec<Arc<Sample>> = train_set.iter().map(|h| h.load()).collect::<Result<_>>()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut shuffle_rng = rng::derive(cfg.seed, 0);
    let mut dropout_rng = rng::derive(cfg.seed, 1);
    let mut opt = AdamW::new(cfg.optimizer, &model.params)?;
    let mut log = TrainingLog::default();
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train_samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_samples[i].as_ref()).collect();
            model.params.zero_grad();
            let grads = {
                let g = Graph::with_params(&model.params);
                let loss = batch_loss(&g, model, &batch, true, &mut dropout_rng)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Numeric {
                        op: "train",
                        message: format!("loss became {value} in epoch {epoch}"),
                    });
                }
                loss_sum += value * batch.len() as f64;
                g.backward(loss)?
            };
            model.params.accumulate(&grads)?;
            opt.step(&mut model.params)?;
        }
        let train_loss = loss_sum / train_samples.len() as f64;

        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let ev = evaluate(model, &val_set)?;
            (Some(ev.loss), Some(ev.accuracy))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: train_loss {train_loss:.4} val_loss {} val_acc {}",
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
        );
        log.epochs.push(record.clone());
        let control = hook(&record, model);
        let last = epoch == cfg.epochs || control == EpochControl::Stop;

        if let Some(dir) = &cfg.out_dir {
            let bytes = checkpoint::to_bytes(model);
            let periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if periodic || last {
                write_file(&dir.join(epoch_checkpoint_name(epoch)), &bytes)?;
            }
            let acc = val_accuracy.unwrap_or(f64::INFINITY);
            if acc >= best_acc {
                best_acc = acc;
                write_file(&dir.join(BEST_CHECKPOINT), &bytes)?;
            }
            write_file(&dir.join(TRAINING_LOG_FILE), log.to_jsonl().as_bytes())?;
        }
        if control == EpochControl::Stop {
            break;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, acc: Option<f64>) -> EpochRecord {
        EpochRecord { epoch, train_loss: 1.0, val_loss: acc.map(|_| 1.0), val_accuracy: acc, wall_seconds: 0.0 }
    }

    #[test]
    fn best_epoch_prefers_later_ties() {
        let log = TrainingLog { epochs: vec![rec(1, Some(0.5)), rec(2, Some(0.75)), rec(3, Some(0.75)), rec(4, Some(0.5))] };
        assert_eq!(log.best_epoch(), Some(3));
        let no_val = TrainingLog { epochs: vec![rec(1, None), rec(2, None)] };
        assert_eq!(no_val.best_epoch(), Some(2));
        assert_eq!(TrainingLog::default().best_epoch(), None);
    }

    #[test]
    fn log_roundtrips_with_exact_keys() {
        let log = TrainingLog { epochs: vec![rec(1, Some(0.25)), rec(2, None)] };
        let text = log.to_jsonl();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["epoch", "train_loss", "val_accuracy", "val_loss", "wall_seconds"]);
        assert_eq!(TrainingLog::from_jsonl(&text, Path::new("x")).unwrap(), log);
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(epoch_checkpoint_name(7), "epoch_0007.vbnc");
    }
}
