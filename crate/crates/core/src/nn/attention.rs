//! Scaled dot-product self-attention, `Softmax(Q K^T / sqrt(d)) V`.

use crate::error::{param_err, Result};
use crate::tensor::Tensor;

use super::softmax::{softmax_backward_into, softmax_into};

pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Tensor,
}

impl AttentionCache {
    /// Row-stochastic attention weights (seq x seq).
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

pub struct AttentionGrads {
    pub x: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// `x: seq x d_in`, `wq, wk: d_in x d`, `wv: d_in x d_v`; returns `seq x d_v`.
pub fn attention(
    x: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
) -> Result<(Tensor, AttentionCache)> {
    if x.rank() != 2 || wq.rank() != 2 || wk.rank() != 2 || wv.rank() != 2 {
        return param_err("attention expects rank-2 inputs");
    }
    let d_in = x.cols();
    if wq.rows() != d_in || wk.rows() != d_in || wv.rows() != d_in || wq.cols() != wk.cols() {
        return param_err(format!(
            "attention shape mismatch: x {:?}, wq {:?}, wk {:?}, wv {:?}",
            x.dims(),
            wq.dims(),
            wk.dims(),
            wv.dims()
        ));
    }
    let d = wq.cols();
    if d == 0 {
        return param_err("attention key dimension must be > 0");
    }
    let q = x.matmul(wq)?;
    let k = x.matmul(wk)?;
    let v = x.matmul(wv)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut scores = q.matmul(&k.transpose())?;
    scores.scale(scale);
    let t = x.rows();
    let mut weights = Tensor::zeros(&[t, t]);
    for r in 0..t {
        let row = scores.row(r).to_vec();
        softmax_into(&row, 1.0, weights.row_mut(r));
    }
    let out = weights.matmul(&v)?;
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            weights,
        },
    ))
}

pub fn attention_backward(
    cache: &AttentionCache,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    g: &Tensor,
) -> AttentionGrads {
    let mm = |a: &Tensor, b: &Tensor| a.matmul(b).expect("shapes fixed by forward");
    let d = wq.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let d_weights = mm(g, &cache.v.transpose());
    let dv = mm(&cache.weights.transpose(), g);
    let t = cache.weights.rows();
    let mut d_scores = Tensor::zeros(&[t, t]);
    for r in 0..t {
        softmax_backward_into(
            cache.weights.row(r),
            d_weights.row(r),
            1.0,
            d_scores.row_mut(r),
        );
    }
    d_scores.scale(scale);
    let dq = mm(&d_scores, &cache.k);
    let dk = mm(&d_scores.transpose(), &cache.q);
    let xt = cache.x.transpose();
    let mut dx = mm(&dq, &wq.transpose());
    dx.add_assign(&mm(&dk, &wk.transpose())).unwrap();
    dx.add_assign(&mm(&dv, &wv.transpose())).unwrap();
    AttentionGrads {
        x: dx,
        wq: mm(&xt, &dq),
        wk: mm(&xt, &dk),
        wv: mm(&xt, &dv),
    }
}
