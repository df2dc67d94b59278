//! Single-direction LSTM without peepholes.
//!
//! Gate blocks are stacked in the order input, forget, cell candidate,
//! output (`i, f, g, o`) along the first axis of `w_ih`, `w_hh`, `b_ih` and
//! `b_hh`:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g)  o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::init::uniform_fan_in;
use crate::param::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct LstmParams {
    /// `4H × D`
    pub w_ih: ParamId,
    /// `4H × H`
    pub w_hh: ParamId,
    /// `4H`
    pub b_ih: ParamId,
    /// `4H`
    pub b_hh: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Config(format!(
                "LSTM sizes must be ≥ 1 (input {input_size}, hidden {hidden_size})"
            )));
        }
        let gates = 4 * hidden_size;
        let w_ih = store.add(
            format!("{prefix}.w_ih"),
            uniform_fan_in(&[gates, input_size], input_size, rng),
            true,
        );
        let w_hh = store.add(
            format!("{prefix}.w_hh"),
            uniform_fan_in(&[gates, hidden_size], hidden_size, rng),
            true,
        );
        let mut b = Tensor::zeros(&[gates]);
        b.data_mut()[hidden_size..2 * hidden_size].fill(FORGET_BIAS);
        let b_ih = store.add(format!("{prefix}.b_ih"), b, false);
        let b_hh = store.add(format!("{prefix}.b_hh"), Tensor::zeros(&[gates]), false);
        Ok(Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input_size,
            hidden_size,
        })
    }

    /// `x · W_ihᵀ + b_ih + b_hh` for every row of `x`.
    fn input_projection(&self, g: &Graph<'_>, x: Var) -> Result<Var> {
        let w_ih_t = g.transpose(g.param(self.w_ih))?;
        let xw = g.matmul(x, w_ih_t)?;
        let xw = g.add_bias(xw, g.param(self.b_ih))?;
        g.add_bias(xw, g.param(self.b_hh))
    }
}

/// State and gate activations after one recurrence step. All are `1 × H`.
#[derive(Debug, Clone, Copy)]
pub struct LstmStep {
    pub h: Var,
    pub c: Var,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub candidate: Var,
    pub output_gate: Var,
}

fn cell(
    g: &Graph<'_>,
    projected_x: Var,
    h_prev: Var,
    c_prev: Var,
    w_hh_t: Var,
    hidden: usize,
) -> Result<LstmStep> {
    let pre = g.add(projected_x, g.matmul(h_prev, w_hh_t)?)?;
    let input_gate = g.sigmoid(g.slice_cols(pre, 0, hidden)?);
    let forget_gate = g.sigmoid(g.slice_cols(pre, hidden, 2 * hidden)?);
    let candidate = g.tanh(g.slice_cols(pre, 2 * hidden, 3 * hidden)?);
    let output_gate = g.sigmoid(g.slice_cols(pre, 3 * hidden, 4 * hidden)?);
    let c = g.add(g.mul(forget_gate, c_prev)?, g.mul(input_gate, candidate)?)?;
    let h = g.mul(output_gate, g.tanh(c))?;
    Ok(LstmStep {
        h,
        c,
        input_gate,
        forget_gate,
        candidate,
        output_gate,
    })
}

fn check_len(op: &'static str, g: &Graph<'_>, v: Var, expected: usize) -> Result<()> {
    let shape = g.shape(v);
    let len: usize = shape.iter().product();
    if len != expected {
        return Err(Error::dim(op, &shape, &[expected]));
    }
    Ok(())
}

/// One recurrence step. `x_t` has `D` entries, the states `H`; vectors and
/// `1 × n` rows are both accepted.
pub fn lstm_step(
    g: &Graph<'_>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<LstmStep> {
    check_len("lstm_step input", g, x_t, p.input_size)?;
    check_len("lstm_step hidden", g, h_prev, p.hidden_size)?;
    check_len("lstm_step cell", g, c_prev, p.hidden_size)?;
    let (x_t, h_prev, c_prev) = (g.as_row(x_t)?, g.as_row(h_prev)?, g.as_row(c_prev)?);
    let projected = p.input_projection(g, x_t)?;
    let w_hh_t = g.transpose(g.param(p.w_hh))?;
    cell(g, projected, h_prev, c_prev, w_hh_t, p.hidden_size)
}

/// A stack of LSTM layers; the summary is the top layer's last hidden state.
#[derive(Debug, Clone)]
pub struct LstmEncoder {
    pub layers: Vec<LstmParams>,
}

impl LstmEncoder {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        n_layers: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Config("LSTM needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let input = if l == 0 { input_size } else { hidden_size };
            layers.push(LstmParams::init(
                store,
                &format!("{prefix}.layer{l}"),
                input,
                hidden_size,
                rng,
            )?);
        }
        Ok(Self { layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_size)
    }

    /// Runs the recurrence from a zero state over every row of `seq`
    /// (`T × D`) and returns the final hidden state as an `H` vector, with
    /// dropout applied to it in training mode.
    pub fn encode(
        &self,
        g: &Graph<'_>,
        seq: Var,
        dropout: f64,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let shape = g.shape(seq);
        if shape.len() != 2 {
            return Err(Error::shape("lstm_encode", format!("expected T × D, got {shape:?}")));
        }
        let steps = shape[0];
        if steps == 0 {
            return Err(Error::EmptySequence("lstm_encode".into()));
        }
        let mut input = seq;
        let mut last = None;
        for (l, layer) in self.layers.iter().enumerate() {
            if g.shape(input)[1] != layer.input_size {
                return Err(Error::dim("lstm_encode", &g.shape(input), &[steps, layer.input_size]));
            }
            let hidden = layer.hidden_size;
            let projected = layer.input_projection(g, input)?;
            let w_hh_t = g.transpose(g.param(layer.w_hh))?;
            let mut h = g.constant(Tensor::zeros(&[1, hidden]));
            let mut c = g.constant(Tensor::zeros(&[1, hidden]));
            let mut outputs = Vec::new();
            for t in 0..steps {
                let step = cell(g, g.row(projected, t)?, h, c, w_hh_t, hidden)?;
                h = step.h;
                c = step.c;
                if l + 1 < self.layers.len() {
                    outputs.push(h);
                }
            }
            if l + 1 < self.layers.len() {
                input = g.concat_rows(&outputs)?;
            }
            last = Some(h);
        }
        let h = last.expect("at least one layer");
        let h = g.dropout(h, dropout, training, rng)?;
        g.reshape(h, &[self.output_dim()])
    }
}
