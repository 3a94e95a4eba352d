//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DMatrix;

/// Singular values below `rel_tol · σ_max` are treated as zero.
pub const NULLSPACE_REL_TOL: f64 = 1e-9;

/// Orthonormal basis (as columns) of the nullspace of `a`, via SVD.
pub fn nullspace(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    nullspace_with_floor(a, rel_tol, 0.0)
}

/// As [`nullspace`], with the cutoff scale at least `floor`, so that a
/// matrix made only of round-off is recognised as zero.
pub fn nullspace_with_floor(a: &DMatrix<f64>, rel_tol: f64, floor: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad short matrices so the thin SVD returns a full right basis.
    let padded;
    let a = if a.nrows() < n {
        padded = a.clone().resize_vertically(n, 0.0);
        &padded
    } else {
        a
    };
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max().max(floor);
    let cutoff = if smax > 0.0 {
        rel_tol * smax
    } else {
        f64::INFINITY
    };
    let cols: Vec<_> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Column-major vectorisation helper: `vec(M)` as a `Vec`.
pub fn vec_of(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Max absolute entry of `a − b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Numerical rank by SVD with a relative cutoff.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let s = a.clone().singular_values();
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * smax).count()
}
