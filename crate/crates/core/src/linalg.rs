//! Dense helpers on `nalgebra::DMatrix` shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Largest absolute entry; zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Max entry of `|m - mᵀ|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// 2-norm condition number from singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    if !m.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse together with its condition number, or `Err(cond)` when the
/// condition number exceeds `cap` (or the LU factorization fails).
pub fn capped_inverse(m: &DMatrix<f64>, cap: f64) -> Result<(DMatrix<f64>, f64), f64> {
    let cond = condition_number(m);
    if !(cond <= cap) {
        return Err(cond);
    }
    match m.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => Ok((inv, cond)),
        _ => Err(f64::INFINITY),
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `xᵀ W x`.
pub fn quad_form(w: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(w * x))
}

/// Stack `[top; bottom]` vertically.
pub fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

/// Assemble a 2×2 block matrix.
pub fn block2(
    a11: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    a21: &DMatrix<f64>,
    a22: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (r1, c1) = a11.shape();
    let (r2, c2) = a22.shape();
    assert_eq!(a12.shape(), (r1, c2));
    assert_eq!(a21.shape(), (r2, c1));
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a11);
    out.view_mut((0, c1), (r1, c2)).copy_from(a12);
    out.view_mut((r1, 0), (r2, c1)).copy_from(a21);
    out.view_mut((r1, c1), (r2, c2)).copy_from(a22);
    out
}

/// Extract block `(i, j)` of a matrix partitioned into `rows × cols` equal blocks.
pub fn block(m: &DMatrix<f64>, i: usize, j: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    m.view((i * rows, j * cols), (rows, cols)).into_owned()
}

/// Row-major flattening used by the CSV exports.
pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capped_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(capped_inverse(&m, 1e12).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let (inv, cond) = capped_inverse(&m, 1e12).unwrap();
        assert!((cond - 2.0).abs() < 1e-12);
        assert!((inv[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn block_roundtrip() {
        let a = DMatrix::from_fn(2, 2, |i, j| (i * 2 + j) as f64);
        let b = DMatrix::from_element(2, 2, 9.0);
        let m = block2(&a, &b, &b, &a);
        assert_eq!(block(&m, 0, 1, 2, 2), b);
        assert_eq!(block(&m, 1, 1, 2, 2), a);
        assert_eq!(row_major(&a), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn min_eig_of_diag() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        assert!((min_eigenvalue_sym(&m) + 1.0).abs() < 1e-12);
    }
}
