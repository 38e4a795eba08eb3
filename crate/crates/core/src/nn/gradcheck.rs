//! Central finite-difference gradient checker.

/// Outcome of [`grad_check`]. Relative error per coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Denominator floor so coordinates with (near) zero gradient are judged on
/// absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `grad(x)` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate.
pub fn grad_check<F, G>(f: F, grad: G, x: &[f64], h: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(x);
    assert_eq!(analytic.len(), x.len(), "gradient length mismatch");
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        numeric.push((up - down) / (2.0 * h));
    }
    report(analytic, numeric)
}

/// Like [`grad_check`] but only probes `indices`; used for large parameter
/// vectors.
pub fn grad_check_subset<F>(
    f: F,
    analytic: &[f64],
    x: &[f64],
    indices: &[usize],
    h: f64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut a = Vec::with_capacity(indices.len());
    let mut numeric = Vec::with_capacity(indices.len());
    for &i in indices {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        a.push(analytic[i]);
        numeric.push((up - down) / (2.0 * h));
    }
    report(a, numeric)
}

fn report(analytic: Vec<f64>, numeric: Vec<f64>) -> GradCheckReport {
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );
    GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    }
}
