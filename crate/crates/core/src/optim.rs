//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::param::{ParamStore, Parameter};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

impl Moments {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// One AdamW update of `param` at step `t` (1-based). Decay is skipped
/// for parameters with `decay == false`.
pub fn adamw_update(param: &mut Parameter, moments: &mut Moments, t: u64, cfg: &AdamWConfig) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("optimizer step count starts at 1".into()));
    }
    if moments.m.shape() != param.value.shape() {
        return Err(Error::dim("adamw", param.value.shape(), moments.m.shape()));
    }
    let lambda = if param.decay { cfg.weight_decay } else { 0.0 };
    let shrink = 1.0 - cfg.lr * lambda;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let g = param.grad.data();
    let m = moments.m.data_mut();
    let v = moments.v.data_mut();
    for (i, w) in param.value.data_mut().iter_mut().enumerate() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *w = *w * shrink - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    t: u64,
    state: Vec<Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let state = params.iter().map(|(_, p)| Moments::zeros(p.value.shape())).collect();
        Ok(Self { config, t: 0, state })
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[Moments] {
        &self.state
    }

    /// Applies the accumulated gradients to every trainable parameter.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.state.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.len(),
                params.len()
            )));
        }
        self.t += 1;
        for (p, st) in params.iter_mut().zip(&mut self.state) {
            if p.trainable {
                adamw_update(p, st, self.t, &self.config)?;
            }
        }
        Ok(())
    }
}
