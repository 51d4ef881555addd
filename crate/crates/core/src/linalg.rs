//! Small dense helpers shared by the interior-point solvers.

use nalgebra::{DMatrix, SymmetricEigen};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest step `a` with `x + a dx` positive semidefinite, for `x` positive
/// definite. Returns infinity when `dx` is positive semidefinite.
pub(crate) fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let n = x.nrows();
    if n == 0 {
        return Some(f64::INFINITY);
    }
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    let mut t = &linv * dx * linv.transpose();
    symmetrize(&mut t);
    let (lo, _) = eigen_extremes(&t);
    Some(if lo < 0.0 { -1.0 / lo } else { f64::INFINITY })
}

pub(crate) fn max_step_nn(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Indices of a maximal linearly independent subset of `rows`, chosen
/// greedily in order by modified Gram-Schmidt with one reorthogonalization
/// pass. A row is dependent when its residual norm falls below
/// `rel_tol` times its original norm.
pub(crate) fn independent_rows(rows: &[Vec<f64>], rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (idx, row) in rows.iter().enumerate() {
        let norm0 = dot(row, row).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = row.clone();
        for _ in 0..2 {
            for q in &basis {
                let p = dot(&r, q);
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= p * qi;
                }
            }
        }
        let norm = dot(&r, &r).sqrt();
        if norm > rel_tol * norm0 {
            for v in &mut r {
                *v /= norm;
            }
            basis.push(r);
            keep.push(idx);
        }
    }
    keep
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
