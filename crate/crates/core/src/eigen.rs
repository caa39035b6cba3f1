//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Used as the ground-truth oracle for matrices that do not come with a
//! known spectrum (ingested data, reconstructed models in tests). Jacobi is
//! slow compared with tridiagonal QR but fully deterministic and accurate to
//! a few ulps of ‖A‖, which is what the tests need at d ≤ 500.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues sorted in non-increasing order with matching eigenvector
/// columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Largest |a_ij| of a matrix.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Flips `v` so its first coordinate that is not negligibly small is
/// positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let scale = v.amax();
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * scale) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Checks symmetry to a relative tolerance of `tol`.
pub fn check_symmetric(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "matrix is {}x{}, not square",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("matrix has non-finite entries".into()));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            if diff > tol * scale {
                return Err(Error::InvalidMatrix(format!(
                    "not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Only the upper triangle is trusted after the symmetry check; the matrix is
/// symmetrized before rotating.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_symmetric(a, 1e-8)?;
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let frob = m.norm();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * 1e-2 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep their original column order
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut vec = v.column(i).into_owned();
        canonical_sign(&mut vec);
        vectors.set_column(col, &vec);
    }
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn analytic_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = jacobi_eigen(&a).unwrap();
        assert!(close(e.values[0], 3.0, 1e-14));
        assert!(close(e.values[1], 1.0, 1e-14));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(e.vectors[(0, 0)], h, 1e-14));
        assert!(close(e.vectors[(1, 0)], h, 1e-14));
    }

    #[test]
    fn diagonal_is_sorted() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 3.0, 1.0]));
        let e = jacobi_eigen(&a).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0, 0.2]);
        assert_eq!(e.vectors.column(0).into_owned(), DVector::from_vec(vec![0.0, 1.0, 0.0]));
    }

    #[test]
    fn residual_small_on_dense_matrix() {
        let n = 12;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let (i, j) = (i.min(j) as f64, i.max(j) as f64);
            (1.0 + i * 0.37 + j * 0.11).sin() + if i == j { 3.0 } else { 0.0 }
        });
        let e = jacobi_eigen(&a).unwrap();
        for k in 0..n {
            let v = e.vectors.column(k);
            let r = (&a * v - v * e.values[k]).norm();
            assert!(r <= 1e-12 * a.norm(), "residual {r}");
        }
        let vtv = e.vectors.transpose() * &e.vectors;
        assert!((vtv - DMatrix::identity(n, n)).amax() < 1e-13);
    }

    #[test]
    fn rejects_non_symmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(jacobi_eigen(&a), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn rejects_non_square() {
        let a = DMatrix::<f64>::zeros(2, 3);
        assert!(jacobi_eigen(&a).is_err());
    }

    #[test]
    fn sign_convention() {
        let mut v = DVector::from_vec(vec![0.0, -0.6, 0.8]);
        canonical_sign(&mut v);
        assert_eq!(v, DVector::from_vec(vec![0.0, 0.6, -0.8]));
    }
}
