//! Scaled dot-product and multi-head self-attention.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::init::uniform_fan_in;
use crate::param::{ParamId, ParamStore};
use crate::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub d_model: usize,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        check_heads(d_model, heads)?;
        let mut proj = |name: &str| {
            store.add(
                format!("{prefix}.{name}"),
                uniform_fan_in(&[d_model, d_model], d_model, rng),
                true,
            )
        };
        Ok(Self {
            w_q: proj("w_q"),
            w_k: proj("w_k"),
            w_v: proj("w_v"),
            w_o: proj("w_o"),
            heads,
            d_model,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }
}

fn check_heads(d_model: usize, heads: usize) -> Result<()> {
    if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "d_model {d_model} is not divisible into {heads} heads"
        )));
    }
    Ok(())
}

pub struct Attention {
    pub output: Var,
    /// Row-stochastic `T × S` weights.
    pub weights: Var,
}

/// `softmax(Q Kᵀ / √d_k) V`.
pub fn scaled_dot_attention(g: &Graph<'_>, q: Var, k: Var, v: Var) -> Result<Attention> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::shape("attention", "Q, K and V must be matrices"));
    }
    let d_k = qs[1];
    if d_k == 0 {
        return Err(Error::dim("attention", &qs, &ks));
    }
    if ks[1] != d_k {
        return Err(Error::dim("attention (Q/K width)", &qs, &ks));
    }
    if ks[0] != vs[0] {
        return Err(Error::dim("attention (K/V length)", &ks, &vs));
    }
    let scores = g.matmul(q, g.transpose(k)?)?;
    let scores = g.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = g.softmax_rows(scores)?;
    let output = g.matmul(weights, v)?;
    Ok(Attention { output, weights })
}

pub struct MultiHead {
    pub output: Var,
    pub head_weights: Vec<Var>,
}

/// Projects `x` to Q, K and V, attends per head on width slices of the
/// joint projections, concatenates the heads and applies `W_o`.
pub fn multi_head_attention(g: &Graph<'_>, x: Var, p: &AttentionParams) -> Result<MultiHead> {
    check_heads(p.d_model, p.heads)?;
    let shape = g.shape(x);
    if shape.len() != 2 || shape[1] != p.d_model {
        return Err(Error::dim("multi_head_attention", &shape, &[0, p.d_model]));
    }
    let q = g.matmul(x, g.param(p.w_q))?;
    let k = g.matmul(x, g.param(p.w_k))?;
    let v = g.matmul(x, g.param(p.w_v))?;
    let d_k = p.d_k();
    let mut heads = Vec::with_capacity(p.heads);
    let mut head_weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (lo, hi) = (h * d_k, (h + 1) * d_k);
        let att = scaled_dot_attention(
            g,
            g.slice_cols(q, lo, hi)?,
            g.slice_cols(k, lo, hi)?,
            g.slice_cols(v, lo, hi)?,
        )?;
        heads.push(att.output);
        head_weights.push(att.weights);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let output = g.matmul(joined, g.param(p.w_o))?;
    Ok(MultiHead {
        output,
        head_weights,
    })
}
