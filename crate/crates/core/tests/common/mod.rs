//! Shared test oracles: finite-difference gradient checks, a brute-force
//! metrics counter and a plain Adam reference.
#![allow(dead_code)]

pub mod grads;

use rand::Rng;
use vibed_core::rng::{self, SeededRng};
use vibed_core::{Graph, ParamId, ParamStore, Result, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// `|a - n| / max(1, |a|, |n|)`: absolute near zero, relative for large
/// gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed pseudo-random weights, so
/// every output entry contributes a distinct amount to the checked loss.
fn scalarize(g: &Graph<'_>, out: Var) -> Result<Var> {
    let shape = g.shape(out);
    if shape.iter().product::<usize>() == 1 {
        return Ok(g.sum(out));
    }
    let mut r = rng::seeded(0xfeed);
    let w = g.constant(random_tensor(&shape, 1.0, &mut r));
    Ok(g.sum(g.mul(out, w)?))
}

fn eval_scalar(g: &Graph<'_>, out: Var) -> Result<f64> {
    let loss = scalarize(g, out)?;
    Ok(g.value(loss).item())
}

/// Max relative error of gradients w.r.t. leaf inputs of `f`.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&Graph<'_>, &[Var]) -> Result<Var>) -> f64 {
    check_inputs_in(&ParamStore::new(), inputs, f)
}

/// As [`check_inputs`], for functions that also read (fixed) parameters.
pub fn check_inputs_in(
    store: &ParamStore,
    inputs: &[Tensor],
    f: impl Fn(&Graph<'_>, &[Var]) -> Result<Var>,
) -> f64 {
    let g = Graph::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars).unwrap();
    let loss = scalarize(&g, out).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect();

    let eval = |perturbed: &[Tensor]| {
        let g = Graph::with_params(store);
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&g, &vars).unwrap();
        eval_scalar(&g, out).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut work = inputs.to_vec();
            work[k].data_mut()[i] = input.data()[i] + FD_STEP;
            let plus = eval(&work);
            work[k].data_mut()[i] = input.data()[i] - FD_STEP;
            let minus = eval(&work);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    worst
}

/// Max relative error of gradients w.r.t. every trainable parameter in
/// `store`, checking at most `per_param` entries of each (evenly spaced).
pub fn check_params(
    store: &mut ParamStore,
    per_param: usize,
    f: impl Fn(&Graph<'_>) -> Result<Var>,
) -> f64 {
    let analytic: Vec<(ParamId, Tensor)> = {
        let g = Graph::with_params(store);
        let out = f(&g).unwrap();
        let loss = scalarize(&g, out).unwrap();
        let grads = g.backward(loss).unwrap();
        store
            .iter()
            .map(|(id, p)| {
                let grad = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                (id, grad)
            })
            .collect()
    };
    let eval = |store: &ParamStore| {
        let g = Graph::with_params(store);
        let out = f(&g).unwrap();
        eval_scalar(&g, out).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (id, grad) in analytic {
        let n = grad.len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    worst
}

/// Per-class counts by scanning every pair for every class.
pub struct BruteCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
    pub grid: Vec<Vec<u64>>,
    pub correct: u64,
}

pub fn brute_force(trues: &[usize], preds: &[usize], c: usize) -> BruteCounts {
    let mut out = BruteCounts {
        tp: vec![0; c],
        fp: vec![0; c],
        fn_: vec![0; c],
        tn: vec![0; c],
        grid: vec![vec![0; c]; c],
        correct: 0,
    };
    for t in 0..c {
        for p in 0..c {
            out.grid[t][p] = trues.iter().zip(preds).filter(|&(&a, &b)| a == t && b == p).count() as u64;
        }
    }
    for k in 0..c {
        for (&t, &p) in trues.iter().zip(preds) {
            match (t == k, p == k) {
                (true, true) => out.tp[k] += 1,
                (false, true) => out.fp[k] += 1,
                (true, false) => out.fn_[k] += 1,
                (false, false) => out.tn[k] += 1,
            }
        }
    }
    out.correct = trues.iter().zip(preds).filter(|(a, b)| a == b).count() as u64;
    out
}

pub fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Textbook Adam on one scalar with no weight decay.
pub fn reference_adam(theta0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    for (i, g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    theta
}
