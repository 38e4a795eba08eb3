//! 2-D cross-correlation and its adjoint (transposed convolution).
//!
//! Tensors are channel-last: inputs `H x W x C_in`, kernels
//! `kh x kw x C_in x C_out`, outputs `H_out x W_out x C_out`.

use crate::error::{param_err, Result};
use crate::tensor::Tensor;

fn dims4(k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match k.dims() {
        &[a, b, c, d] => Ok((a, b, c, d)),
        other => param_err(format!("kernel must be rank 4, got {other:?}")),
    }
}

fn dims3(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match x.dims() {
        &[a, b, c] => Ok((a, b, c)),
        other => param_err(format!("{what} must be rank 3 (H x W x C), got {other:?}")),
    }
}

pub fn conv2d_out_size(n: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || n + 2 * padding < k {
        return param_err(format!(
            "conv: input {n} + 2*{padding} too small for kernel {k} (stride {stride})"
        ));
    }
    Ok((n + 2 * padding - k) / stride + 1)
}

/// Input position for output index `o` and kernel offset `a`, if in range.
#[inline]
fn src(o: usize, a: usize, stride: usize, padding: usize, n: usize) -> Option<usize> {
    let p = (o * stride + a).checked_sub(padding)?;
    (p < n).then_some(p)
}

pub fn conv2d(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (h, w, cin) = dims3(x, "conv2d input")?;
    let (kh, kw, kcin, cout) = dims4(kernel)?;
    if kcin != cin {
        return param_err(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        ));
    }
    let ho = conv2d_out_size(h, kh, stride, padding)?;
    let wo = conv2d_out_size(w, kw, stride, padding)?;
    let mut y = Tensor::zeros(&[ho, wo, cout]);
    let (xd, kd) = (x.data(), kernel.data());
    let yd = y.data_mut();
    for i in 0..ho {
        for j in 0..wo {
            let out = &mut yd[(i * wo + j) * cout..(i * wo + j + 1) * cout];
            for a in 0..kh {
                let Some(r) = src(i, a, stride, padding, h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(c) = src(j, b, stride, padding, w) else {
                        continue;
                    };
                    let xin = &xd[(r * w + c) * cin..(r * w + c + 1) * cin];
                    let kbase = (a * kw + b) * cin * cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, kv) in out.iter_mut().zip(krow) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`conv2d`] with the same kernel: maps `H_out x W_out x C_out`
/// back to `H x W x C_in` where `H = (H_out - 1) * stride - 2 * padding + kh`.
pub fn transpose_conv2d(
    y: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (ho, wo, cout) = dims3(y, "transpose_conv2d input")?;
    let (kh, kw, cin, kcout) = dims4(kernel)?;
    if kcout != cout {
        return param_err(format!(
            "transpose_conv2d: input has {cout} channels, kernel produces {kcout}"
        ));
    }
    if stride == 0
        || ho == 0
        || wo == 0
        || (ho - 1) * stride + kh <= 2 * padding
        || (wo - 1) * stride + kw <= 2 * padding
    {
        return param_err("transpose_conv2d: output would be empty");
    }
    let h = (ho - 1) * stride + kh - 2 * padding;
    let w = (wo - 1) * stride + kw - 2 * padding;
    let mut x = Tensor::zeros(&[h, w, cin]);
    let (yd, kd) = (y.data(), kernel.data());
    let xd = x.data_mut();
    for i in 0..ho {
        for j in 0..wo {
            let g = &yd[(i * wo + j) * cout..(i * wo + j + 1) * cout];
            for a in 0..kh {
                let Some(r) = src(i, a, stride, padding, h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(c) = src(j, b, stride, padding, w) else {
                        continue;
                    };
                    let dst = &mut xd[(r * w + c) * cin..(r * w + c + 1) * cin];
                    let kbase = (a * kw + b) * cin * cout;
                    for (ci, d) in dst.iter_mut().enumerate() {
                        let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                        *d += krow.iter().zip(g).map(|(k, g)| k * g).sum::<f64>();
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Kernel gradient of `<conv2d(x, k), dy>`; also the kernel gradient of
/// `<transpose_conv2d(dy, k), x>`.
pub fn conv2d_kernel_grad(
    x: &Tensor,
    dy: &Tensor,
    kernel_dims: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (h, w, cin) = dims3(x, "conv2d input")?;
    let (ho, wo, cout) = dims3(dy, "conv2d output gradient")?;
    let (kh, kw) = (kernel_dims[0], kernel_dims[1]);
    if kernel_dims != [kh, kw, cin, cout] {
        return param_err(format!(
            "kernel dims {kernel_dims:?} incompatible with {cin} -> {cout} channels"
        ));
    }
    let mut dk = Tensor::zeros(kernel_dims);
    let (xd, gd) = (x.data(), dy.data());
    let kd = dk.data_mut();
    for i in 0..ho {
        for j in 0..wo {
            let g = &gd[(i * wo + j) * cout..(i * wo + j + 1) * cout];
            for a in 0..kh {
                let Some(r) = src(i, a, stride, padding, h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(c) = src(j, b, stride, padding, w) else {
                        continue;
                    };
                    let xin = &xd[(r * w + c) * cin..(r * w + c + 1) * cin];
                    let kbase = (a * kw + b) * cin * cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &mut kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (k, gv) in krow.iter_mut().zip(g) {
                            *k += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok(dk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = rand_t(&[4, 5, 3], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant() {
        let c = 0.4;
        let x = Tensor::filled(&[6, 7, 1], c);
        let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.dims(), &[6, 7, 1]);
        for i in 1..5 {
            for j in 1..6 {
                assert!((y.data()[i * 7 + j] - 9.0 * c).abs() < 1e-12);
            }
        }
        assert!((y.data()[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(h, w, s, p, k) in &[
            (6usize, 7usize, 1usize, 1usize, 3usize),
            (7, 9, 2, 1, 3),
            (5, 5, 1, 0, 2),
            (9, 9, 3, 2, 4),
        ] {
            let x = rand_t(&[h, w, 3], &mut rng);
            let kern = rand_t(&[k, k, 3, 4], &mut rng);
            let y = conv2d(&x, &kern, s, p).unwrap();
            let g = rand_t(y.dims(), &mut rng);
            let xt = transpose_conv2d(&g, &kern, s, p).unwrap();
            assert_eq!(xt.dims(), x.dims());
            let lhs = y.dot(&g).unwrap();
            let rhs = x.dot(&xt).unwrap();
            assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[4, 4, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[3, 3, 3, 1]), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[7, 7, 2, 1]), 1, 0).is_err());
        assert!(transpose_conv2d(&x, &Tensor::zeros(&[3, 3, 1, 3]), 1, 1).is_err());
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = rand_t(&[4, 5, 2], &mut rng);
            let k = rand_t(&[3, 3, 2, 3], &mut rng);
            let up = rand_t(&[4, 5, 3], &mut rng);
            let re = |v: &[f64], like: &Tensor| Tensor::from_vec(like.dims(), v.to_vec()).unwrap();
            let dx = transpose_conv2d(&up, &k, 1, 1).unwrap();
            let dk = conv2d_kernel_grad(&x, &up, k.dims(), 1, 1).unwrap();
            let r = grad_check(
                |v| conv2d(&re(v, &x), &k, 1, 1).unwrap().dot(&up).unwrap(),
                |_| dx.data().to_vec(),
                x.data(),
                1e-4,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
            let r = grad_check(
                |v| conv2d(&x, &re(v, &k), 1, 1).unwrap().dot(&up).unwrap(),
                |_| dk.data().to_vec(),
                k.data(),
                1e-4,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");

            // transposed direction: input y (4x5x3) -> 4x5x2
            let y = rand_t(&[4, 5, 3], &mut rng);
            let up2 = rand_t(&[4, 5, 2], &mut rng);
            let dy = conv2d(&up2, &k, 1, 1).unwrap();
            let dk2 = conv2d_kernel_grad(&up2, &y, k.dims(), 1, 1).unwrap();
            let r = grad_check(
                |v| {
                    transpose_conv2d(&re(v, &y), &k, 1, 1)
                        .unwrap()
                        .dot(&up2)
                        .unwrap()
                },
                |_| dy.data().to_vec(),
                y.data(),
                1e-4,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
            let r = grad_check(
                |v| {
                    transpose_conv2d(&y, &re(v, &k), 1, 1)
                        .unwrap()
                        .dot(&up2)
                        .unwrap()
                },
                |_| dk2.data().to_vec(),
                k.data(),
                1e-4,
            );
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
