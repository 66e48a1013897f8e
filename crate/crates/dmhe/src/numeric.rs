//! Shared dense linear-algebra helpers.
//!
//! Two tolerance regimes coexist. Rank decisions (excitation checks,
//! controllability, PBH tests) use the coarse cutoff
//! `sigma_max * max(rows, cols) * 1e-12`, which is deliberately loose so a
//! certified rank survives downstream arithmetic. Least-squares solves inside
//! the QP layer use the machine-precision cutoff
//! `sigma_max * max(rows, cols) * f64::EPSILON` to keep solutions accurate.

use nalgebra::{DMatrix, DVector};

/// Numerical rank under the coarse cutoff.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let cut = sv.max() * m.nrows().max(m.ncols()) as f64 * 1e-12;
    sv.iter().filter(|&&s| s > cut).count()
}

/// Machine-precision singular-value cutoff for least-squares solves.
pub(crate) fn solve_cutoff(m: &DMatrix<f64>) -> f64 {
    let smax = m.singular_values().max();
    (smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON).max(f64::MIN_POSITIVE)
}

/// Min-norm least-squares solution of `m z = b`.
pub(crate) fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(m.ncols());
    }
    let cut = solve_cutoff(m);
    m.clone()
        .svd(true, true)
        .solve(b, cut)
        .expect("svd requested both factors")
}

/// Orthonormal basis of the null space of `m`, as matrix columns.
///
/// Wide matrices are padded with zero rows to square so the SVD exposes the
/// full right singular basis (the decomposition is otherwise thin). Singular
/// values at or below `sigma_max * max(rows, cols) * eps_rel` count as zero.
pub(crate) fn null_basis(m: &DMatrix<f64>, eps_rel: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    let work = if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let vt = svd.v_t.expect("svd requested v_t");
    let sv = &svd.singular_values;
    let cut = sv.max() * rows.max(cols) as f64 * eps_rel;
    let keep: Vec<usize> = (0..cols).filter(|&i| sv[i] <= cut).collect();
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &vt.row(i).transpose());
    }
    basis
}

/// Pseudoinverse of a symmetric PSD matrix via its eigendecomposition.
pub(crate) fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let cut = lmax * d as f64 * f64::EPSILON;
    let mut inv_l = DVector::zeros(d);
    for i in 0..d {
        if eig.eigenvalues[i].abs() > cut {
            inv_l[i] = 1.0 / eig.eigenvalues[i];
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_l) * eig.eigenvectors.transpose()
}

/// Spectral norm (largest singular value), zero for empty matrices.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        0.0
    } else {
        m.singular_values().max()
    }
}
