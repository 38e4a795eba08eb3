//! Standardized low-resolution tomography (sLORETA) baseline.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{param_err, EsiError, Result};
use crate::geometry::LeadField;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 0.05;

/// Smallest eigenvalue, relative to the largest, accepted as non-singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Precomputed inverse operator: `S_hat = diag(1/sqrt(R_jj)) T X` with
/// `T = G^T (G G^T + lambda tr(G G^T)/N_c I)^-1` and `R = T G`.
#[derive(Clone, Debug)]
pub struct SloretaSolver {
    kernel: Tensor,
    inv_sqrt_res: Vec<f64>,
}

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

impl SloretaSolver {
    pub fn new(lf: &LeadField, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return param_err(format!("lambda must be finite and >= 0, got {lambda}"));
        }
        let g = to_na(lf.matrix());
        let n_c = g.nrows();
        let mut gram = &g * g.transpose();
        let reg = lambda * gram.trace() / n_c as f64;
        for i in 0..n_c {
            gram[(i, i)] += reg;
        }
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= SINGULAR_RATIO * max {
            return Err(EsiError::Numerical(format!(
                "sLORETA system is singular (eigenvalues in [{min:e}, {max:e}]); increase lambda"
            )));
        }
        let inv = eig.eigenvectors.clone()
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
            * eig.eigenvectors.transpose();
        let t = g.transpose() * inv;
        let mut inv_sqrt_res = Vec::with_capacity(g.ncols());
        for j in 0..g.ncols() {
            let r_jj = t.row(j).dot(&g.column(j).transpose());
            if !(r_jj > 0.0) {
                return Err(EsiError::Numerical(format!(
                    "resolution matrix diagonal {r_jj:e} at region {j} is not positive"
                )));
            }
            inv_sqrt_res.push(1.0 / r_jj.sqrt());
        }
        let kernel = Tensor::from_fn2(t.nrows(), t.ncols(), |i, j| t[(i, j)]);
        Ok(SloretaSolver {
            kernel,
            inv_sqrt_res,
        })
    }

    /// The unstandardized minimum-norm kernel `T` (`N_s x N_c`).
    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn solve(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.rows() != self.kernel.cols() {
            return param_err(format!(
                "fragment {:?} does not match a {}-channel lead field",
                x.dims(),
                self.kernel.cols()
            ));
        }
        let mut j = self.kernel.matmul(x)?;
        for (r, s) in self.inv_sqrt_res.iter().enumerate() {
            j.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        Ok(j)
    }
}

pub fn sloreta_solve(lf: &LeadField, x: &Tensor, lambda: f64) -> Result<Tensor> {
    SloretaSolver::new(lf, lambda)?.solve(x)
}
