use crate::error::{param_err, Result};

/// `exp(x/tau) / sum exp(x/tau)`, computed with max subtraction.
pub fn temp_softmax(x: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return param_err(format!("softmax temperature must be > 0, got {tau}"));
    }
    let mut out = vec![0.0; x.len()];
    softmax_into(x, tau, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(x: &[f64], tau: f64, out: &mut [f64]) {
    let m = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = ((v - m) / tau).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Gradient w.r.t. the input given the forward output `y` and upstream `g`.
pub fn temp_softmax_backward(y: &[f64], g: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    softmax_backward_into(y, g, tau, &mut out);
    out
}

pub(crate) fn softmax_backward_into(y: &[f64], g: &[f64], tau: f64, out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, yi), gi) in out.iter_mut().zip(y).zip(g) {
        *o = yi * (gi - dot) / tau;
    }
}
