//! The three refinement views of a FAIR block, each with its backward pass.
//!
//! Grids are `N_c x N_p x depth` tensors; the conv layers read them as
//! channel-last images with the EEG/MEG channel and patch index as the two
//! spatial axes.

use rand::Rng;

use super::config::{FairConfig, SpectralMode};
use crate::dataset::PatchGrid;
use crate::error::{param_err, Result};
use crate::nn::attention::{attention, attention_backward, AttentionCache};
use crate::nn::conv::{conv2d, conv2d_kernel_grad, transpose_conv2d};
use crate::nn::fft::{fft_backward, fft_in_place, ifft_backward};
use crate::nn::layers::{
    elu_backward, elu_tensor, init_uniform, layer_norm, layer_norm_backward, LayerNormCache,
};
use crate::nn::softmax::{softmax_backward_into, softmax_into};
use crate::tensor::Tensor;

fn grid_dims(p: &Tensor) -> Result<(usize, usize, usize)> {
    match p.dims() {
        &[c, n, l] => Ok((c, n, l)),
        other => param_err(format!("patch grid must be rank 3, got {other:?}")),
    }
}

fn with_patches(like: &PatchGrid, patches: Tensor) -> PatchGrid {
    PatchGrid {
        patches,
        patch_len: like.patch_len,
        stride: like.stride,
        n_timepoints_original: like.n_timepoints_original,
    }
}

pub(crate) struct SpectralCache {
    re: Vec<f64>,
    im: Vec<f64>,
    sre: Vec<f64>,
    sim: Vec<f64>,
}

pub(crate) fn spectral_forward(
    p: &Tensor,
    tau: f64,
    mode: SpectralMode,
) -> Result<(Tensor, SpectralCache)> {
    let (_, _, l) = grid_dims(p)?;
    if !l.is_power_of_two() {
        return param_err(format!(
            "spectral view needs a power-of-two patch length, got {l}"
        ));
    }
    if !(tau > 0.0) {
        return param_err(format!("tau must be > 0, got {tau}"));
    }
    let n = p.len();
    let mut cache = SpectralCache {
        re: p.data().to_vec(),
        im: vec![0.0; n],
        sre: vec![0.0; n],
        sim: vec![0.0; n],
    };
    let mut out = Tensor::zeros(p.dims());
    let mut wr = vec![0.0; l];
    let mut wi = vec![0.0; l];
    for b in (0..n).step_by(l) {
        let r = b..b + l;
        fft_in_place(&mut cache.re[r.clone()], &mut cache.im[r.clone()], false);
        softmax_into(&cache.re[r.clone()], tau, &mut cache.sre[r.clone()]);
        softmax_into(&cache.im[r.clone()], tau, &mut cache.sim[r.clone()]);
        for k in 0..l {
            let (sr, si) = (cache.sre[b + k], cache.sim[b + k]);
            (wr[k], wi[k]) = match mode {
                SpectralMode::Replace => (sr, si),
                SpectralMode::Reweight => (cache.re[b + k] * sr, cache.im[b + k] * si),
            };
        }
        fft_in_place(&mut wr, &mut wi, true);
        out.data_mut()[r].copy_from_slice(&wr);
    }
    Ok((out, cache))
}

pub(crate) fn spectral_backward(
    cache: &SpectralCache,
    tau: f64,
    mode: SpectralMode,
    g: &Tensor,
) -> Tensor {
    let l = *g.dims().last().expect("rank 3");
    let mut dx = Tensor::zeros(g.dims());
    let mut dre = vec![0.0; l];
    let mut dim = vec![0.0; l];
    let mut tmp_r = vec![0.0; l];
    let mut tmp_i = vec![0.0; l];
    for b in (0..g.len()).step_by(l) {
        let r = b..b + l;
        let (gr, gi) = ifft_backward(&g.data()[r.clone()]);
        let (re, im) = (&cache.re[r.clone()], &cache.im[r.clone()]);
        let (sre, sim) = (&cache.sre[r.clone()], &cache.sim[r.clone()]);
        match mode {
            SpectralMode::Replace => {
                softmax_backward_into(sre, &gr, tau, &mut dre);
                softmax_backward_into(sim, &gi, tau, &mut dim);
            }
            SpectralMode::Reweight => {
                for k in 0..l {
                    tmp_r[k] = gr[k] * re[k];
                    tmp_i[k] = gi[k] * im[k];
                }
                softmax_backward_into(sre, &tmp_r, tau, &mut dre);
                softmax_backward_into(sim, &tmp_i, tau, &mut dim);
                for k in 0..l {
                    dre[k] += gr[k] * sre[k];
                    dim[k] += gi[k] * sim[k];
                }
            }
        }
        dx.data_mut()[r].copy_from_slice(&fft_backward(&dre, &dim));
    }
    dx
}

pub(crate) fn temporal_forward(p: &Tensor, tau: f64) -> Result<Tensor> {
    let (_, _, l) = grid_dims(p)?;
    if !(tau > 0.0) {
        return param_err(format!("tau must be > 0, got {tau}"));
    }
    let mut out = Tensor::zeros(p.dims());
    for b in (0..p.len()).step_by(l) {
        softmax_into(&p.data()[b..b + l], tau, &mut out.data_mut()[b..b + l]);
    }
    Ok(out)
}

pub(crate) fn temporal_backward(y: &Tensor, tau: f64, g: &Tensor) -> Tensor {
    let l = *g.dims().last().expect("rank 3");
    let mut dx = Tensor::zeros(g.dims());
    for b in (0..g.len()).step_by(l) {
        softmax_backward_into(
            &y.data()[b..b + l],
            &g.data()[b..b + l],
            tau,
            &mut dx.data_mut()[b..b + l],
        );
    }
    dx
}

/// Per-patch spectral refinement: FFT, tempered softmax on the real and
/// imaginary spectra, inverse FFT (real part).
pub fn spectral_refine(p: &PatchGrid, tau: f64, mode: SpectralMode) -> Result<PatchGrid> {
    let (out, _) = spectral_forward(&p.patches, tau, mode)?;
    Ok(with_patches(p, out))
}

/// Tempered softmax along the time axis of every patch.
pub fn temporal_refine(p: &PatchGrid, tau: f64) -> Result<PatchGrid> {
    Ok(with_patches(p, temporal_forward(&p.patches, tau)?))
}

/// `alpha * ps + (1 - alpha) * pt`.
pub fn fuse(ps: &PatchGrid, pt: &PatchGrid, alpha: f64) -> Result<PatchGrid> {
    if !(0.0..=1.0).contains(&alpha) {
        return param_err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    ps.patches.same_shape(&pt.patches)?;
    let mut out = ps.patches.scaled(alpha);
    out.axpy(1.0 - alpha, &pt.patches)?;
    Ok(with_patches(ps, out))
}

fn key_index(p: &Tensor, channel: usize) -> usize {
    let (_, n_p, l) = (p.dims()[0], p.dims()[1], p.dims()[2]);
    let row = &p.data()[channel * n_p * l..(channel + 1) * n_p * l];
    let mut best = 0;
    let mut best_e = f64::NEG_INFINITY;
    for (j, patch) in row.chunks_exact(l).enumerate() {
        let e: f64 = patch.iter().map(|v| v * v).sum();
        if e > best_e {
            best = j;
            best_e = e;
        }
    }
    best
}

/// Highest-energy patch of `channel`; the smallest index wins ties.
pub fn select_key_patch(pl: &PatchGrid, channel: usize) -> usize {
    key_index(&pl.patches, channel)
}

/// Learnable weights of the patch-wise view of one FAIR block.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchParams {
    /// Scalar-to-token embedding, `1 x d` and `d`.
    pub w_emb: Tensor,
    pub b_emb: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    /// Token-to-scalar projection, `d x 1` and `1`.
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    /// ConvBlock: `k x k x 2l x D`, bias and LayerNorm over `D`.
    pub k1: Tensor,
    pub b1: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    /// TransposeConvBlock: kernel `k x k x l x D` read as the adjoint map.
    pub k2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

pub(crate) const PATCH_PARAM_NAMES: [&str; 15] = [
    "w_emb", "b_emb", "wq", "wk", "wv", "proj_w", "proj_b", "k1", "b1", "ln1_gain", "ln1_bias",
    "k2", "b2", "ln2_gain", "ln2_bias",
];

impl PatchParams {
    pub fn new(cfg: &FairConfig, rng: &mut impl Rng) -> Self {
        let (l, d, k, depth) = (
            cfg.patch_len,
            cfg.attention_dim,
            cfg.kernel_size,
            cfg.conv_depth(),
        );
        PatchParams {
            w_emb: init_uniform(&[1, d], 1, rng),
            b_emb: init_uniform(&[d], 1, rng),
            wq: init_uniform(&[d, d], d, rng),
            wk: init_uniform(&[d, d], d, rng),
            wv: init_uniform(&[d, d], d, rng),
            proj_w: init_uniform(&[d, 1], d, rng),
            proj_b: init_uniform(&[1], d, rng),
            k1: init_uniform(&[k, k, 2 * l, depth], k * k * 2 * l, rng),
            b1: init_uniform(&[depth], k * k * 2 * l, rng),
            ln1_gain: Tensor::filled(&[depth], 1.0),
            ln1_bias: Tensor::zeros(&[depth]),
            k2: init_uniform(&[k, k, l, depth], k * k * depth, rng),
            b2: init_uniform(&[l], k * k * depth, rng),
            ln2_gain: Tensor::filled(&[l], 1.0),
            ln2_bias: Tensor::zeros(&[l]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut()
            .into_iter()
            .for_each(|t| *t = Tensor::zeros(t.dims()));
        z
    }

    /// In [`PATCH_PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 15] {
        [
            &self.w_emb,
            &self.b_emb,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.proj_w,
            &self.proj_b,
            &self.k1,
            &self.b1,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.k2,
            &self.b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 15] {
        [
            &mut self.w_emb,
            &mut self.b_emb,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.k1,
            &mut self.b1,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.k2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

fn add_depth_bias(t: &mut Tensor, b: &Tensor) {
    let d = b.len();
    for chunk in t.data_mut().chunks_exact_mut(d) {
        chunk.iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
    }
}

fn depth_bias_grad(g: &Tensor) -> Tensor {
    let d = *g.dims().last().expect("rank >= 1");
    let mut db = Tensor::zeros(&[d]);
    for chunk in g.data().chunks_exact(d) {
        db.data_mut()
            .iter_mut()
            .zip(chunk)
            .for_each(|(a, v)| *a += v);
    }
    db
}

pub(crate) struct PatchCache {
    pub key: Vec<usize>,
    att: Vec<AttentionCache>,
    att_out: Vec<Tensor>,
    pub summary: Tensor,
    pub augmented: Tensor,
    z1: Tensor,
    ln1: LayerNormCache,
    n1: Tensor,
    z2: Tensor,
    ln2: LayerNormCache,
}

impl PatchCache {
    pub fn attention_weights(&self) -> Vec<Tensor> {
        self.att.iter().map(|c| c.weights().clone()).collect()
    }
}

/// Per-channel self-attention summary of the key patch: `l` scalar tokens
/// embedded to width `d`, attended, projected back to one value per token.
pub(crate) fn key_summary(
    key_patch: &[f64],
    prm: &PatchParams,
) -> Result<(Vec<f64>, AttentionCache, Tensor)> {
    let l = key_patch.len();
    let d = prm.w_emb.cols();
    let emb = Tensor::from_fn2(l, d, |t, k| {
        key_patch[t] * prm.w_emb.data()[k] + prm.b_emb.data()[k]
    });
    let (a, cache) = attention(&emb, &prm.wq, &prm.wk, &prm.wv)?;
    let u = a.matmul(&prm.proj_w)?;
    let summary = u.data().iter().map(|v| v + prm.proj_b.data()[0]).collect();
    Ok((summary, cache, a))
}

pub(crate) fn patch_forward(
    pl: &Tensor,
    prm: &PatchParams,
    padding: usize,
) -> Result<(Tensor, PatchCache)> {
    let (n_c, n_p, l) = grid_dims(pl)?;
    if prm.w_emb.dims() != [1, prm.wq.rows()] || prm.k1.dims()[2] != 2 * l || prm.k2.dims()[2] != l
    {
        return param_err(format!(
            "patch parameters do not match patch length {l}: k1 {:?}, k2 {:?}",
            prm.k1.dims(),
            prm.k2.dims()
        ));
    }
    let mut key = Vec::with_capacity(n_c);
    let mut att = Vec::with_capacity(n_c);
    let mut att_out = Vec::with_capacity(n_c);
    let mut summary = Tensor::zeros(&[n_c, l]);
    for c in 0..n_c {
        let p = key_index(pl, c);
        let base = (c * n_p + p) * l;
        let (u, cache, a) = key_summary(&pl.data()[base..base + l], prm)?;
        summary.row_mut(c).copy_from_slice(&u);
        key.push(p);
        att.push(cache);
        att_out.push(a);
    }
    let mut augmented = Tensor::zeros(&[n_c, n_p, 2 * l]);
    {
        let dst = augmented.data_mut();
        for c in 0..n_c {
            for j in 0..n_p {
                let o = (c * n_p + j) * 2 * l;
                let s = (c * n_p + j) * l;
                dst[o..o + l].copy_from_slice(&pl.data()[s..s + l]);
                dst[o + l..o + 2 * l].copy_from_slice(summary.row(c));
            }
        }
    }
    let mut y1 = conv2d(&augmented, &prm.k1, 1, padding)?;
    add_depth_bias(&mut y1, &prm.b1);
    let z1 = elu_tensor(&y1);
    let (n1, ln1) = layer_norm(&z1, prm.ln1_gain.data(), prm.ln1_bias.data())?;
    let mut y2 = transpose_conv2d(&n1, &prm.k2, 1, padding)?;
    if y2.dims() != pl.dims() {
        return param_err(format!(
            "transpose conv produced {:?}, expected {:?}",
            y2.dims(),
            pl.dims()
        ));
    }
    add_depth_bias(&mut y2, &prm.b2);
    let z2 = elu_tensor(&y2);
    let (out, ln2) = layer_norm(&z2, prm.ln2_gain.data(), prm.ln2_bias.data())?;
    Ok((
        out,
        PatchCache {
            key,
            att,
            att_out,
            summary,
            augmented,
            z1,
            ln1,
            n1,
            z2,
            ln2,
        },
    ))
}

/// Returns the gradient on the input grid and accumulates parameter
/// gradients into `grads`.
pub(crate) fn patch_backward(
    cache: &PatchCache,
    pl: &Tensor,
    prm: &PatchParams,
    padding: usize,
    g: &Tensor,
    grads: &mut PatchParams,
) -> Tensor {
    let expect = "shapes fixed by forward";
    let (n_c, n_p, l) = (pl.dims()[0], pl.dims()[1], pl.dims()[2]);
    let (dz2, dg2, db2n) = layer_norm_backward(&cache.ln2, prm.ln2_gain.data(), g);
    acc_slice(&mut grads.ln2_gain, &dg2);
    acc_slice(&mut grads.ln2_bias, &db2n);
    let dy2 = elu_backward(&cache.z2, &dz2);
    grads.b2.add_assign(&depth_bias_grad(&dy2)).expect(expect);
    let dk2 = conv2d_kernel_grad(&dy2, &cache.n1, prm.k2.dims(), 1, padding).expect(expect);
    grads.k2.add_assign(&dk2).expect(expect);
    let dn1 = conv2d(&dy2, &prm.k2, 1, padding).expect(expect);
    let (dz1, dg1, db1n) = layer_norm_backward(&cache.ln1, prm.ln1_gain.data(), &dn1);
    acc_slice(&mut grads.ln1_gain, &dg1);
    acc_slice(&mut grads.ln1_bias, &db1n);
    let dy1 = elu_backward(&cache.z1, &dz1);
    grads.b1.add_assign(&depth_bias_grad(&dy1)).expect(expect);
    let dk1 = conv2d_kernel_grad(&cache.augmented, &dy1, prm.k1.dims(), 1, padding).expect(expect);
    grads.k1.add_assign(&dk1).expect(expect);
    let daug = transpose_conv2d(&dy1, &prm.k1, 1, padding).expect(expect);

    let mut dpl = Tensor::zeros(pl.dims());
    let d = prm.wq.rows();
    for c in 0..n_c {
        let mut du = vec![0.0; l];
        for j in 0..n_p {
            let o = (c * n_p + j) * 2 * l;
            let s = (c * n_p + j) * l;
            dpl.data_mut()[s..s + l].copy_from_slice(&daug.data()[o..o + l]);
            du.iter_mut()
                .zip(&daug.data()[o + l..o + 2 * l])
                .for_each(|(a, v)| *a += v);
        }
        let du_t = Tensor::from_vec(&[l, 1], du).expect(expect);
        grads.proj_b.data_mut()[0] += du_t.data().iter().sum::<f64>();
        grads
            .proj_w
            .add_assign(&cache.att_out[c].transpose().matmul(&du_t).expect(expect))
            .expect(expect);
        let da = du_t.matmul(&prm.proj_w.transpose()).expect(expect);
        let ag = attention_backward(&cache.att[c], &prm.wq, &prm.wk, &prm.wv, &da);
        grads.wq.add_assign(&ag.wq).expect(expect);
        grads.wk.add_assign(&ag.wk).expect(expect);
        grads.wv.add_assign(&ag.wv).expect(expect);
        let p = cache.key[c];
        let base = (c * n_p + p) * l;
        for t in 0..l {
            let key_t = pl.data()[base + t];
            let row = ag.x.row(t);
            let mut dkey = 0.0;
            for k in 0..d {
                grads.w_emb.data_mut()[k] += key_t * row[k];
                grads.b_emb.data_mut()[k] += row[k];
                dkey += row[k] * prm.w_emb.data()[k];
            }
            dpl.data_mut()[base + t] += dkey;
        }
    }
    dpl
}

fn acc_slice(t: &mut Tensor, v: &[f64]) {
    t.data_mut().iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Patch-wise refinement of a fused grid; output has the input's shape.
pub fn patch_refine(pl: &PatchGrid, prm: &PatchParams, kernel_size: usize) -> Result<PatchGrid> {
    let (out, _) = patch_forward(&pl.patches, prm, kernel_size / 2)?;
    Ok(with_patches(pl, out))
}
