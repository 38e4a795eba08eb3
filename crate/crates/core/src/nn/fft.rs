//! Iterative radix-2 Cooley-Tukey FFT and the adjoints used for backprop.

use crate::error::{param_err, Result};
use crate::tensor::Tensor;

/// Real and imaginary parts of a spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPair {
    pub re: Tensor,
    pub im: Tensor,
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return param_err(format!("FFT length must be a power of two, got {n}"));
    }
    Ok(())
}

/// In-place transform of `(re, im)`; `inverse` flips the twiddle sign and
/// scales by `1/n`. Length must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * std::f64::consts::TAU / len as f64;
        for k in 0..half {
            let (ws, wc) = (step * k as f64).sin_cos();
            let mut start = 0;
            while start < n {
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * wc - im[b] * ws;
                let ti = re[b] * ws + im[b] * wc;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                start += len;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / n as f64;
        re.iter_mut().for_each(|v| *v *= s);
        im.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn fft(x: &[f64]) -> Result<ComplexPair> {
    check_len(x.len())?;
    let mut re = x.to_vec();
    let mut im = vec![0.0; x.len()];
    fft_in_place(&mut re, &mut im, false);
    Ok(ComplexPair {
        re: Tensor::from_vec(&[x.len()], re)?,
        im: Tensor::from_vec(&[x.len()], im)?,
    })
}

/// Inverse transform returning the real part. The imaginary residue is
/// non-zero whenever the spectrum is not conjugate-symmetric; its energy is
/// reported at trace level.
pub fn ifft(spec: &ComplexPair) -> Result<Vec<f64>> {
    spec.re.same_shape(&spec.im)?;
    check_len(spec.re.len())?;
    let (out, residue) = ifft_real(spec.re.data(), spec.im.data());
    log::trace!("ifft discarded imaginary energy {residue:e}");
    Ok(out)
}

/// Real part of the inverse transform plus the discarded imaginary energy.
pub(crate) fn ifft_real(re: &[f64], im: &[f64]) -> (Vec<f64>, f64) {
    let mut r = re.to_vec();
    let mut i = im.to_vec();
    fft_in_place(&mut r, &mut i, true);
    let residue = i.iter().map(|v| v * v).sum();
    (r, residue)
}

/// Adjoint of `x -> (Re FFT x, Im FFT x)` for real `x`.
pub fn fft_backward(d_re: &[f64], d_im: &[f64]) -> Vec<f64> {
    let n = d_re.len() as f64;
    let mut r = d_re.to_vec();
    let mut i = d_im.to_vec();
    fft_in_place(&mut r, &mut i, true);
    r.iter_mut().for_each(|v| *v *= n);
    r
}

/// Adjoint of `(re, im) -> Re IFFT(re + i im)`.
pub fn ifft_backward(g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = g.len() as f64;
    let mut r = g.to_vec();
    let mut i = vec![0.0; g.len()];
    fft_in_place(&mut r, &mut i, false);
    r.iter_mut().for_each(|v| *v /= n);
    i.iter_mut().for_each(|v| *v /= n);
    (r, i)
}
