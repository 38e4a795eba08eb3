//! ELU, LayerNorm, linear layers and a small MLP.

use rand::Rng;

use crate::error::{param_err, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative expressed through the forward output.
pub fn elu_grad_from_output(y: f64) -> f64 {
    if y >= 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

pub fn elu_tensor(x: &Tensor) -> Tensor {
    x.map(elu)
}

pub fn elu_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let mut out = g.clone();
    for (o, yv) in out.data_mut().iter_mut().zip(y.data()) {
        *o *= elu_grad_from_output(*yv);
    }
    out
}

/// Cached normalised values and inverse standard deviations per row.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub width: usize,
}

/// Normalises each length-`d` row (last axis) to zero mean and unit variance,
/// then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64]) -> Result<(Tensor, LayerNormCache)> {
    let d = *x.dims().last().unwrap_or(&0);
    if d == 0 || gain.len() != d || bias.len() != d {
        return param_err(format!(
            "layer_norm: width {d} vs gain {} / bias {}",
            gain.len(),
            bias.len()
        ));
    }
    let rows = x.len() / d;
    let mut out = Tensor::zeros(x.dims());
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        let o = &mut out.data_mut()[r * d..(r + 1) * d];
        for k in 0..d {
            let h = (row[k] - mean) * is;
            xhat[r * d + k] = h;
            o[k] = h * gain[k] + bias[k];
        }
    }
    Ok((
        out,
        LayerNormCache {
            xhat,
            inv_std,
            width: d,
        },
    ))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    g: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let d = cache.width;
    let rows = g.len() / d;
    let mut dx = Tensor::zeros(g.dims());
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let gr = &g.data()[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for k in 0..d {
            dgain[k] += gr[k] * xh[k];
            dbias[k] += gr[k];
            dxhat[k] = gr[k] * gain[k];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let o = &mut dx.data_mut()[r * d..(r + 1) * d];
        for k in 0..d {
            o[k] = cache.inv_std[r] * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    (dx, dgain, dbias)
}

/// `x W + b` for `x: rows x in`, `W: in x out`, `b: out`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut y = x.matmul(w)?;
    if let Some(b) = b {
        if b.len() != w.cols() {
            return param_err(format!("bias length {} vs {} outputs", b.len(), w.cols()));
        }
        for r in 0..y.rows() {
            for (o, bv) in y.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dW, db)` for [`linear`].
pub fn linear_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let dx = g.matmul(&w.transpose()).expect("shapes checked in forward");
    let dw = x.transpose().matmul(g).expect("shapes checked in forward");
    let mut db = Tensor::zeros(&[w.cols()]);
    for r in 0..g.rows() {
        for (d, gv) in db.data_mut().iter_mut().zip(g.row(r)) {
            *d += gv;
        }
    }
    (dx, dw, db)
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
pub fn init_uniform(dims: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(dims, data).expect("count matches dims")
}

/// Alternating linear layers and ELU (no activation after the last layer).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

pub struct MlpCache {
    inputs: Vec<Tensor>,
    activations: Vec<Tensor>,
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            weights.push(init_uniform(&[w[0], w[1]], w[0], rng));
            biases.push(init_uniform(&[w[1]], w[0], rng));
        }
        Mlp { weights, biases }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        let mut inputs = Vec::new();
        let mut activations = Vec::new();
        let mut h = x.clone();
        let last = self.weights.len().saturating_sub(1);
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = linear(&h, w, Some(b))?;
            inputs.push(h);
            h = if i < last { elu_tensor(&z) } else { z };
            activations.push(h.clone());
        }
        Ok((
            h,
            MlpCache {
                inputs,
                activations,
            },
        ))
    }

    /// Returns `(dx, weight grads, bias grads)`.
    pub fn backward(&self, cache: &MlpCache, g: &Tensor) -> (Tensor, Vec<Tensor>, Vec<Tensor>) {
        let n = self.weights.len();
        let mut dws = vec![Tensor::zeros(&[0]); n];
        let mut dbs = vec![Tensor::zeros(&[0]); n];
        let mut grad = g.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                grad = elu_backward(&cache.activations[i], &grad);
            }
            let (dx, dw, db) = linear_backward(&cache.inputs[i], &self.weights[i], &grad);
            dws[i] = dw;
            dbs[i] = db;
            grad = dx;
        }
        (grad, dws, dbs)
    }
}
