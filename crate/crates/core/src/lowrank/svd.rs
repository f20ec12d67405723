use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const NUMERICAL_RANK_RTOL: f64 = 1e-12;

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Thin SVD `m = U diag(sigma) Vt` keeping only the numerically non-zero
/// singular triples, in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U[:, :r] diag(sigma[:r]) Vt[:r, :]`.
    pub fn reconstruct(&self, r: usize) -> Matrix {
        let r = r.min(self.rank());
        self.u
            .take_cols(r)
            .scale_cols(&self.sigma[..r])
            .matmul(&self.vt.take_rows(r))
    }
}

/// Thin SVD via one-sided (Hestenes) Jacobi rotations.
pub fn thin_svd(m: &Matrix) -> Result<SvdFactors> {
    if !m.is_finite() {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidMatrix(format!(
            "empty {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() >= m.cols() {
        Ok(jacobi_tall(m))
    } else {
        let t = jacobi_tall(&m.transpose());
        Ok(SvdFactors {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (ap, aq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

// Requires rows >= cols.
fn jacobi_tall(m: &Matrix) -> SvdFactors {
    let (rows, n) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut triples: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (dot(col, col).sqrt(), j))
        .collect();
    triples.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let sigma_max = triples.first().map_or(0.0, |t| t.0);
    let kept: Vec<(f64, usize)> = triples
        .into_iter()
        .filter(|&(s, _)| s > 0.0 && s >= NUMERICAL_RANK_RTOL * sigma_max)
        .collect();

    let r = kept.len();
    let mut u = Matrix::zeros(rows, r);
    let mut vt = Matrix::zeros(r, n);
    let mut sigma = Vec::with_capacity(r);
    for (k, &(s, j)) in kept.iter().enumerate() {
        sigma.push(s);
        for i in 0..rows {
            u[(i, k)] = a[j][i] / s;
        }
        vt.row_mut(k).copy_from_slice(&v[j]);
    }
    SvdFactors { u, sigma, vt }
}
