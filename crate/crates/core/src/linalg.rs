//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Flips each column so that its first entry that is not negligible is positive.
pub fn fix_column_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-10 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and a
/// deterministic sign per eigenvector.
pub fn sym_eigen_sorted(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `m^{-1/2}` of a symmetric positive definite matrix, or `None` if it is not.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let (vals, vecs) = sym_eigen_sorted(s);
    let top = vals.iter().copied().fold(0.0, f64::max);
    if vals.iter().any(|&v| !(v > 1e-14 * top)) {
        return None;
    }
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] / vals[j].sqrt());
    Some(&scaled * vecs.transpose())
}

/// Identity with the last diagonal entry optionally zeroed.
pub fn penalty_identity(dim: usize, skip_last: bool) -> DMatrix<f64> {
    let mut id = DMatrix::identity(dim, dim);
    if skip_last && dim > 0 {
        id[(dim - 1, dim - 1)] = 0.0;
    }
    id
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.transpose().iter())
        .map(|(x, y)| x * y)
        .sum()
}

/// Kronecker product `a ⊗ b` of column vectors.
pub fn kron_vec(a: &[f64], b: &[f64], out: &mut [f64]) {
    let nb = b.len();
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * nb + j] = ai * bj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_signed() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = sym_eigen_sorted(m);
        assert_eq!(vals.as_slice(), &[2.0, 3.0]);
        assert_eq!(vecs, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn inverse_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = inv_sqrt_spd(&m).unwrap();
        let back = &r * &m * &r;
        assert!((back - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(inv_sqrt_spd(&DMatrix::from_row_slice(1, 1, &[0.0])).is_none());
    }

    #[test]
    fn trace_of_product() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(trace_product(&a, &b), (&a * &b).trace());
    }
}
