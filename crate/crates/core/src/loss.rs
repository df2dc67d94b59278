//! Classification losses over clips.

use crate::autodiff::{Graph, Var};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::VibedModel;
use crate::rng::SeededRng;

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(g: &Graph<'_>, logits: Var, label: usize) -> Result<Var> {
    g.cross_entropy(logits, label)
}

pub fn sample_loss(
    g: &Graph<'_>,
    model: &VibedModel,
    sample: &Sample,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Var> {
    let (scene, face) = sample.tensors()?;
    let (s, f) = (g.constant(scene), g.constant(face));
    let logits = model.forward(g, s, f, training, rng)?;
    cross_entropy(g, logits, sample.label)
}

/// Mean cross-entropy over a mini-batch; samples are processed in order.
pub fn batch_loss(
    g: &Graph<'_>,
    model: &VibedModel,
    batch: &[&Sample],
    training: bool,
    rng: &mut SeededRng,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("batch_loss needs at least one sample".into()));
    }
    let losses = batch
        .iter()
        .map(|s| sample_loss(g, model, s, training, rng))
        .collect::<Result<Vec<_>>>()?;
    g.average(&losses)
}
