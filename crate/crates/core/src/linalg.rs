//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition limit for every explicit inverse taken by the solvers.
pub const COND_LIMIT: f64 = 1e12;

pub fn symmetrize(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
}

pub fn asymmetry(x: &DMatrix<f64>) -> f64 {
    (x - x.transpose()).norm()
}

pub fn min_sym_eigenvalue(x: &DMatrix<f64>) -> f64 {
    let mut s = x.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().min()
}

pub fn max_sym_eigenvalue(x: &DMatrix<f64>) -> f64 {
    let mut s = x.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().max()
}

pub fn spectral_radius(x: &DMatrix<f64>) -> f64 {
    x.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 1 || x.ncols() == 1 {
        return x.norm();
    }
    x.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

fn norm_1(x: &DMatrix<f64>) -> f64 {
    x.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU inverse with a 1-norm condition estimate; rejects above `limit`.
pub fn inverse_checked(x: &DMatrix<f64>, limit: f64, what: &str) -> Result<DMatrix<f64>> {
    let inv = x.clone().lu().try_inverse().ok_or_else(|| Error::Conditioning {
        what: what.to_string(),
        cond: f64::INFINITY,
        limit,
    })?;
    let cond = norm_1(x) * norm_1(&inv);
    if !cond.is_finite() || cond > limit {
        return Err(Error::Conditioning {
            what: what.to_string(),
            cond,
            limit,
        });
    }
    Ok(inv)
}

pub fn solve_checked(
    a: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    limit: f64,
    what: &str,
) -> Result<DMatrix<f64>> {
    let inv = inverse_checked(a, limit, what)?;
    Ok(inv * rhs)
}

/// Matrix power by repeated squaring.
pub fn mat_pow(m: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Solves the Stein equation `X = M X Mᵀ + V` through the vectorized
/// `(I − M⊗M) vec X = vec V` system.
pub fn solve_stein(m: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let kron = m.kronecker(m);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(v.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| {
        Error::Precondition("I - M⊗M is singular (monodromy not stable)".into())
    })?;
    let mut x = DMatrix::from_column_slice(n, n, sol.as_slice());
    symmetrize(&mut x);
    Ok(x)
}

/// Assembles a 2×2 block matrix.
pub fn block2(
    a11: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    a21: &DMatrix<f64>,
    a22: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (r1, c1) = a11.shape();
    let (r2, c2) = a22.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a11);
    out.view_mut((0, c1), (r1, c2)).copy_from(a12);
    out.view_mut((r1, 0), (r2, c1)).copy_from(a21);
    out.view_mut((r1, c1), (r2, c2)).copy_from(a22);
    out
}

pub fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stein_scalar() {
        let m = DMatrix::from_element(1, 1, 0.5);
        let v = DMatrix::from_element(1, 1, -3.0);
        let x = solve_stein(&m, &v).unwrap();
        assert!((x[(0, 0)] + 4.0).abs() < 1e-14);
    }

    #[test]
    fn stein_matrix_satisfies_equation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.4]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let x = solve_stein(&m, &v).unwrap();
        let res = &x - &m * &x * m.transpose() - &v;
        assert!(res.norm() < 1e-13);
    }

    #[test]
    fn pow_matches_repeated_product() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let mut direct = DMatrix::identity(2, 2);
        for _ in 0..13 {
            direct = &direct * &m;
        }
        assert!((mat_pow(&m, 13) - direct).norm() < 1e-14);
        assert_eq!(mat_pow(&m, 0), DMatrix::identity(2, 2));
    }

    #[test]
    fn singular_inverse_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            inverse_checked(&m, COND_LIMIT, "test"),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn radius_of_rotation_is_one() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-14);
    }
}
