//! One-sided (Hestenes) Jacobi SVD and the Moore-Penrose pseudo-inverse.
//!
//! Intended for the small dense matrices of the codec (at most a few hundred
//! rows by a few dozen columns). Always runs in double precision.

use super::Matrix;
use crate::{Error, Result};

/// Relative cutoff below which singular values count as zero.
pub const DEFAULT_SIGMA_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// Thin SVD `A = U diag(s) V^T`, singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x r` with `r = min(m, n)`.
    pub u: Matrix<f64>,
    pub s: Vec<f64>,
    /// `n x r`.
    pub v: Matrix<f64>,
}

pub fn svd_thin(a: &Matrix<f64>) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    if a.rows() >= a.cols() {
        Ok(jacobi_tall(a))
    } else {
        let t = jacobi_tall(&a.transpose());
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

/// Orthogonalises the columns of a tall matrix by plane rotations.
fn jacobi_tall(a: &Matrix<f64>) -> Svd {
    let (m, n) = a.shape();
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            c
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = cols.iter().enumerate().map(|(j, c)| (dot(c, c).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        for i in 0..m {
            u.set(i, k, if sigma > 0.0 { cols[j][i] / sigma } else { 0.0 });
        }
        for i in 0..n {
            v.set(i, k, vcols[j][i]);
        }
    }
    Svd { u, s, v }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W^+ = V diag(1/sigma) U^T`, dropping singular values below
/// `sigma_tol * sigma_max`.
pub fn pseudo_inverse(w: &Matrix<f64>, sigma_tol: f64) -> Result<Matrix<f64>> {
    if !(sigma_tol >= 0.0) {
        return Err(Error::Config(format!("sigma_tol must be >= 0, got {sigma_tol}")));
    }
    let svd = svd_thin(w)?;
    let sigma_max = svd.s.first().copied().unwrap_or(0.0);
    let cutoff = sigma_tol * sigma_max;
    let rank = svd.s.iter().filter(|&&s| s > 0.0 && s > cutoff).count();
    if rank == 0 {
        return Err(Error::Degenerate("effective rank is zero".into()));
    }
    let (m, n) = w.shape();
    let mut out = Matrix::zeros(n, m);
    for k in 0..rank {
        let inv = 1.0 / svd.s[k];
        for i in 0..n {
            let vik = svd.v.get(i, k) * inv;
            if vik == 0.0 {
                continue;
            }
            let row = out.row_mut(i);
            for (j, r) in row.iter_mut().enumerate() {
                *r += vik * svd.u.get(j, k);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pinv_is_identity() {
        let i = Matrix::<f64>::identity(5);
        assert_eq!(pseudo_inverse(&i, DEFAULT_SIGMA_TOL).unwrap(), i);
    }

    #[test]
    fn diagonal_singular_values_invert() {
        // 3x2 with singular values 2 and 0.5 placed on a permuted pattern
        let w = Matrix::from_vec(3, 2, vec![0.0, 0.5, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let p = pseudo_inverse(&w, DEFAULT_SIGMA_TOL).unwrap();
        let expected = Matrix::from_vec(2, 3, vec![0.0, 0.5, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert!(p.max_abs_diff(&expected) < 1e-15);
        let s = svd_thin(&p).unwrap().s;
        assert!((s[0] - 2.0).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn padding_embed_is_exact() {
        let mut w = Matrix::<f64>::zeros(8, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let p = pseudo_inverse(&w, DEFAULT_SIGMA_TOL).unwrap();
        assert_eq!(p, w.transpose());
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let z = Matrix::<f64>::zeros(4, 2);
        assert!(matches!(pseudo_inverse(&z, DEFAULT_SIGMA_TOL), Err(Error::Degenerate(_))));
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let mut w = Matrix::<f64>::identity(2);
        w.set(0, 1, f64::NAN);
        assert!(matches!(pseudo_inverse(&w, DEFAULT_SIGMA_TOL), Err(Error::Numeric(_))));
    }

    #[test]
    fn wide_matrix_goes_through_transpose() {
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, 0.0, 0.0, 1.0, 3.0]).unwrap();
        let p = pseudo_inverse(&w, DEFAULT_SIGMA_TOL).unwrap();
        // full row rank: W W^+ = I
        let wp = w.matmul(&p);
        assert!(wp.max_abs_diff(&Matrix::identity(2)) < 1e-13);
    }
}
