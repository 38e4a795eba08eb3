//! Fragment normalisation and the channel-independent, temporally overlapped
//! patch grid.

use crate::error::{param_err, EsiError, Result};
use crate::tensor::Tensor;

pub use crate::sim::{load_manifest, load_sample, Manifest, PairedSample, Split};

/// `N_c x N_p x l` grid of patches plus what is needed to undo the split.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub patches: Tensor,
    pub patch_len: usize,
    pub stride: usize,
    pub n_timepoints_original: usize,
}

/// Padded length and patch count for a fragment of `n_t` samples.
pub fn patch_layout(n_t: usize, patch_len: usize, overlap: usize) -> Result<(usize, usize)> {
    if patch_len < 2 {
        return param_err(format!("patch length must be >= 2, got {patch_len}"));
    }
    if overlap >= patch_len {
        return param_err(format!(
            "overlap {overlap} must be smaller than patch length {patch_len}"
        ));
    }
    if patch_len > n_t {
        return param_err(format!(
            "patch length {patch_len} exceeds fragment length {n_t}"
        ));
    }
    let stride = patch_len - overlap;
    let n_p = (n_t - patch_len).div_ceil(stride) + 1;
    Ok((patch_len + (n_p - 1) * stride, n_p))
}

impl PatchGrid {
    pub fn n_channels(&self) -> usize {
        self.patches.dims()[0]
    }

    pub fn n_patches(&self) -> usize {
        self.patches.dims()[1]
    }

    pub fn padded_len(&self) -> usize {
        self.patch_len + (self.n_patches() - 1) * self.stride
    }

    pub fn patch(&self, channel: usize, j: usize) -> &[f64] {
        let l = self.patch_len;
        let off = (channel * self.n_patches() + j) * l;
        &self.patches.data()[off..off + l]
    }

    fn validate(&self) -> Result<()> {
        let d = self.patches.dims();
        if d.len() != 3 || d[2] != self.patch_len || d[1] == 0 {
            return Err(EsiError::Format(format!(
                "patch tensor dims {:?} disagree with patch length {}",
                d, self.patch_len
            )));
        }
        if self.stride == 0 || self.stride > self.patch_len {
            return Err(EsiError::Format(format!("invalid stride {}", self.stride)));
        }
        let (n_t, padded) = (self.n_timepoints_original, self.padded_len());
        if n_t > padded
            || n_t < self.patch_len
            || (self.n_patches() > 1 && n_t + self.stride <= padded)
        {
            return Err(EsiError::Format(format!(
                "original length {} inconsistent with {} patches",
                self.n_timepoints_original,
                self.n_patches()
            )));
        }
        Ok(())
    }

    /// Number of patches covering each padded time index.
    pub fn coverage(&self) -> Vec<usize> {
        let mut count = vec![0; self.padded_len()];
        for j in 0..self.n_patches() {
            for c in &mut count[j * self.stride..j * self.stride + self.patch_len] {
                *c += 1;
            }
        }
        count
    }
}

/// Splits every channel of `x` (channels x time) into windows of `patch_len`
/// with `overlap` shared samples, zero-padding the tail to a full window.
pub fn extract_patches(x: &Tensor, patch_len: usize, overlap: usize) -> Result<PatchGrid> {
    if x.rank() != 2 {
        return param_err(format!("fragment must be rank 2, got {:?}", x.dims()));
    }
    let (n_c, n_t) = (x.rows(), x.cols());
    let (_, n_p) = patch_layout(n_t, patch_len, overlap)?;
    let stride = patch_len - overlap;
    let mut patches = Tensor::zeros(&[n_c, n_p, patch_len]);
    let out = patches.data_mut();
    for c in 0..n_c {
        let row = x.row(c);
        for j in 0..n_p {
            let base = (c * n_p + j) * patch_len;
            for k in 0..patch_len {
                let t = j * stride + k;
                if t < n_t {
                    out[base + k] = row[t];
                }
            }
        }
    }
    Ok(PatchGrid {
        patches,
        patch_len,
        stride,
        n_timepoints_original: n_t,
    })
}

/// Overlap-add divided by coverage, with the tail padding removed.
pub fn merge_patches(grid: &PatchGrid) -> Result<Tensor> {
    grid.validate()?;
    let (n_c, n_p) = (grid.n_channels(), grid.n_patches());
    let count = grid.coverage();
    let n_t = grid.n_timepoints_original;
    let mut acc = vec![0.0; grid.padded_len()];
    let mut x = Tensor::zeros(&[n_c, n_t]);
    for c in 0..n_c {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n_p {
            for (k, v) in grid.patch(c, j).iter().enumerate() {
                acc[j * grid.stride + k] += v;
            }
        }
        for (t, dst) in x.row_mut(c).iter_mut().enumerate() {
            *dst = acc[t] / count[t] as f64;
        }
    }
    Ok(x)
}

/// Adjoint of [`merge_patches`]: maps a gradient on the merged fragment back
/// onto the patch grid layout of `like`.
pub fn merge_patches_adjoint(grad: &Tensor, like: &PatchGrid) -> Result<Tensor> {
    let (n_c, n_p, l) = (like.n_channels(), like.n_patches(), like.patch_len);
    grad.expect_dims(&[n_c, like.n_timepoints_original], "merge gradient")?;
    let count = like.coverage();
    let mut out = Tensor::zeros(&[n_c, n_p, l]);
    let data = out.data_mut();
    for c in 0..n_c {
        let g = grad.row(c);
        for j in 0..n_p {
            for k in 0..l {
                let t = j * like.stride + k;
                if t < g.len() {
                    data[(c * n_p + j) * l + k] = g[t] / count[t] as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Divides by the largest absolute entry; all-zero input keeps scale 1.
pub fn normalize_fragment(x: &Tensor) -> Result<(Tensor, f64)> {
    if !x.is_finite() {
        return Err(EsiError::Data("fragment contains NaN or Inf".into()));
    }
    let m = x.max_abs();
    if m == 0.0 {
        return Ok((x.clone(), 1.0));
    }
    Ok((x.scaled(1.0 / m), m))
}
