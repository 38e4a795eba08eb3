//! GRU cell with backprop-through-time, and its bidirectional wrapper.
//!
//! Gate layout follows the common `[reset, update, candidate]` packing:
//!
//! ```text
//! r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
//! z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
//! n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use rand::Rng;

use super::layers::init_uniform;
use crate::error::{param_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    /// `input x 3h`
    pub w_ih: Tensor,
    /// `h x 3h`
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl GruParams {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruParams {
            w_ih: init_uniform(&[input, 3 * hidden], hidden, rng),
            w_hh: init_uniform(&[hidden, 3 * hidden], hidden, rng),
            b_ih: init_uniform(&[3 * hidden], hidden, rng),
            b_hh: init_uniform(&[3 * hidden], hidden, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_ih: Tensor::zeros(&[input, 3 * hidden]),
            w_hh: Tensor::zeros(&[hidden, 3 * hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }

    pub fn input(&self) -> usize {
        self.w_ih.rows()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.b_ih,
            &mut self.b_hh,
        ]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-direction forward record.
pub struct GruCache {
    x: Tensor,
    /// `T+1 x h`; row 0 is the initial (zero) state.
    h: Tensor,
    r: Tensor,
    z: Tensor,
    n: Tensor,
    hn: Tensor,
}

fn gru_forward(x: &Tensor, p: &GruParams) -> Result<(Tensor, GruCache)> {
    if x.rank() != 2 || x.cols() != p.input() {
        return param_err(format!(
            "gru: input {:?} vs expected width {}",
            x.dims(),
            p.input()
        ));
    }
    let (t_len, hs) = (x.rows(), p.hidden());
    if t_len == 0 {
        return param_err("gru: sequence must have at least one step");
    }
    let xi = x.matmul(&p.w_ih)?;
    let mut h = Tensor::zeros(&[t_len + 1, hs]);
    let mut r = Tensor::zeros(&[t_len, hs]);
    let mut z = Tensor::zeros(&[t_len, hs]);
    let mut n = Tensor::zeros(&[t_len, hs]);
    let mut hn = Tensor::zeros(&[t_len, hs]);
    let mut hh = vec![0.0; 3 * hs];
    for t in 0..t_len {
        hh.copy_from_slice(p.b_hh.data());
        let hprev = h.row(t).to_vec();
        for (k, hv) in hprev.iter().enumerate() {
            if *hv == 0.0 {
                continue;
            }
            for (o, w) in hh.iter_mut().zip(p.w_hh.row(k)) {
                *o += hv * w;
            }
        }
        let xr = xi.row(t);
        let b = p.b_ih.data();
        for k in 0..hs {
            let rv = sigmoid(xr[k] + b[k] + hh[k]);
            let zv = sigmoid(xr[hs + k] + b[hs + k] + hh[hs + k]);
            let nv = (xr[2 * hs + k] + b[2 * hs + k] + rv * hh[2 * hs + k]).tanh();
            r.set(t, k, rv);
            z.set(t, k, zv);
            n.set(t, k, nv);
            hn.set(t, k, hh[2 * hs + k]);
            h.set(t + 1, k, (1.0 - zv) * nv + zv * hprev[k]);
        }
    }
    let out = Tensor::from_vec(&[t_len, hs], h.data()[hs..].to_vec())?;
    Ok((
        out,
        GruCache {
            x: x.clone(),
            h,
            r,
            z,
            n,
            hn,
        },
    ))
}

fn gru_backward(cache: &GruCache, p: &GruParams, g: &Tensor) -> (Tensor, GruParams) {
    let (t_len, hs) = (g.rows(), p.hidden());
    let mut grads = GruParams::zeros(p.input(), hs);
    let mut d_ai = Tensor::zeros(&[t_len, 3 * hs]);
    let mut dh_next = vec![0.0; hs];
    let mut d_ah = vec![0.0; 3 * hs];
    for t in (0..t_len).rev() {
        let hprev = cache.h.row(t);
        let dh: Vec<f64> = g.row(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (r, z, n, hn) = (
            cache.r.row(t),
            cache.z.row(t),
            cache.n.row(t),
            cache.hn.row(t),
        );
        let dai = d_ai.row_mut(t);
        for k in 0..hs {
            let dn = dh[k] * (1.0 - z[k]);
            let dz = dh[k] * (hprev[k] - n[k]);
            let dan = dn * (1.0 - n[k] * n[k]);
            let dr = dan * hn[k];
            let daz = dz * z[k] * (1.0 - z[k]);
            let dar = dr * r[k] * (1.0 - r[k]);
            dai[k] = dar;
            dai[hs + k] = daz;
            dai[2 * hs + k] = dan;
            d_ah[k] = dar;
            d_ah[hs + k] = daz;
            d_ah[2 * hs + k] = dan * r[k];
            dh_next[k] = dh[k] * z[k];
        }
        for (b, d) in grads.b_hh.data_mut().iter_mut().zip(&d_ah) {
            *b += d;
        }
        for (k, hv) in hprev.iter().enumerate() {
            let dwrow = grads.w_hh.row_mut(k);
            let wrow = p.w_hh.row(k);
            let mut acc = 0.0;
            for j in 0..3 * hs {
                dwrow[j] += hv * d_ah[j];
                acc += wrow[j] * d_ah[j];
            }
            dh_next[k] += acc;
        }
    }
    for t in 0..t_len {
        for (b, d) in grads.b_ih.data_mut().iter_mut().zip(d_ai.row(t)) {
            *b += d;
        }
    }
    grads.w_ih = cache.x.transpose().matmul(&d_ai).expect("gru shapes");
    let dx = d_ai.matmul(&p.w_ih.transpose()).expect("gru shapes");
    (dx, grads)
}

fn reverse_rows(x: &Tensor) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    Tensor::from_fn2(t, c, |i, j| x.at(t - 1 - i, j))
}

pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
}

/// Runs one GRU forward in time and one backward; output row `t` is
/// `[h_fwd(t), h_bwd(t)]`, width `2h`.
pub fn bigru(x: &Tensor, fwd: &GruParams, bwd: &GruParams) -> Result<(Tensor, BiGruCache)> {
    if fwd.hidden() != bwd.hidden() {
        return param_err("bigru: directions must share hidden size");
    }
    let (hf, cf) = gru_forward(x, fwd)?;
    let (hb_rev, cb) = gru_forward(&reverse_rows(x), bwd)?;
    let hb = reverse_rows(&hb_rev);
    let hs = fwd.hidden();
    let out = Tensor::from_fn2(x.rows(), 2 * hs, |t, k| {
        if k < hs {
            hf.at(t, k)
        } else {
            hb.at(t, k - hs)
        }
    });
    Ok((out, BiGruCache { fwd: cf, bwd: cb }))
}

/// Returns `(dx, forward-direction grads, backward-direction grads)`.
pub fn bigru_backward(
    cache: &BiGruCache,
    fwd: &GruParams,
    bwd: &GruParams,
    g: &Tensor,
) -> (Tensor, GruParams, GruParams) {
    let hs = fwd.hidden();
    let t_len = g.rows();
    let gf = Tensor::from_fn2(t_len, hs, |t, k| g.at(t, k));
    let gb_rev = Tensor::from_fn2(t_len, hs, |t, k| g.at(t_len - 1 - t, hs + k));
    let (dxf, df) = gru_backward(&cache.fwd, fwd, &gf);
    let (dxb_rev, db) = gru_backward(&cache.bwd, bwd, &gb_rev);
    let mut dx = dxf;
    dx.add_assign(&reverse_rows(&dxb_rev)).expect("same dims");
    (dx, df, db)
}
