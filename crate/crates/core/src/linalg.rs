//! Small dense linear-algebra helpers shared by the identification, testing
//! and integral-equation modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Thin SVD with singular values sorted in non-increasing order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    /// Left singular vectors as columns (`rows × r`).
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Right singular vectors as columns (`cols × r`).
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let svd = m.clone().svd(true, true);
        let u = svd
            .u
            .ok_or_else(|| Error::Numeric("SVD did not return left vectors".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numeric("SVD did not return right vectors".into()))?;
        let s = svd.singular_values;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite singular value".into()));
        }

        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

        let r = s.len();
        let mut su = DMatrix::zeros(u.nrows(), r);
        let mut sv = DMatrix::zeros(v_t.ncols(), r);
        let mut values = Vec::with_capacity(r);
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            sv.set_column(dst, &v_t.row(src).transpose());
            values.push(s[src]);
        }
        Ok(Self {
            u: su,
            singular_values: values,
            v: sv,
        })
    }

    pub fn max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Inverse symmetric square root of a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(d) = diagonal_of(m) {
        if d.iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("covariance is not positive-definite".into()));
        }
        return Ok(DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt())));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Numeric("covariance is not positive-definite".into()));
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Returns the diagonal when `m` is exactly diagonal.
fn diagonal_of(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c && m[(r, c)] != 0.0 {
                return None;
            }
        }
    }
    Some(m.diagonal())
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_svd_reconstructs() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.25]);
        let svd = SortedSvd::new(&m).unwrap();
        assert!(svd.singular_values[0] >= svd.singular_values[1]);
        let s = DMatrix::from_diagonal(&DVector::from_vec(svd.singular_values.clone()));
        let back = &svd.u * s * svd.v.transpose();
        assert!(max_abs(&(back - m)) < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = inv_sqrt_spd(&m).unwrap();
        let inv = m.clone().try_inverse().unwrap();
        assert!(max_abs(&(&r * &r - inv)) < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(inv_sqrt_spd(&m).is_err());
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(inv_sqrt_spd(&d).is_err());
    }
}
