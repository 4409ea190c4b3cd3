//! Small dense kernels shared by assembly and factorization.

use nalgebra::{DMatrix, DMatrixViewMut, SymmetricEigen, SVD};

/// Rank truncation rule for low-rank blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    /// Relative Frobenius accuracy of the discarded tail.
    pub eps: f64,
    pub max_rank: usize,
}

impl Truncation {
    pub fn new(eps: f64, max_rank: usize) -> Self {
        Truncation { eps, max_rank }
    }
}

/// Smallest rank whose discarded singular-value tail is below `eps` relative
/// to the total Frobenius norm.
pub fn truncated_rank(sorted_sv: &[f64], trunc: &Truncation) -> usize {
    let total: f64 = sorted_sv.iter().map(|s| s * s).sum();
    if total == 0.0 || !total.is_finite() {
        return 0;
    }
    let limit = trunc.eps * trunc.eps * total;
    let mut tail = 0.0;
    let mut k = sorted_sv.len();
    while k > 0 {
        let s = sorted_sv[k - 1];
        if tail + s * s > limit {
            break;
        }
        tail += s * s;
        k -= 1;
    }
    k.min(trunc.max_rank)
}

/// Recompresses `u vᵀ` to a lower rank via QR of both factors and an SVD of
/// the small core.
pub fn truncate(u: &DMatrix<f64>, v: &DMatrix<f64>, trunc: &Truncation) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n, r) = (u.nrows(), v.nrows(), u.ncols());
    debug_assert_eq!(r, v.ncols());
    if r == 0 {
        return (DMatrix::zeros(m, 0), DMatrix::zeros(n, 0));
    }
    if r >= m.min(n) {
        return truncate_dense(&(u * v.transpose()), trunc);
    }
    let (qu, ru) = thin_qr(u);
    let (qv, rv) = thin_qr(v);
    let core = &ru * rv.transpose();
    // Left singular vectors of the core from its Gram matrix; the right
    // factor is the exact projection coreᵀ W, so rounding in small
    // eigenvalues only affects the discarded tail.
    let eig = SymmetricEigen::new(&core * core.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let k = truncated_rank(&sorted, trunc);
    let mut cu = DMatrix::zeros(core.nrows(), k);
    for (c, &i) in order[..k].iter().enumerate() {
        cu.set_column(c, &eig.eigenvectors.column(i));
    }
    let cv = core.tr_mul(&cu);
    (qu * cu, qv * cv)
}

/// Thin QR of a tall matrix (`ncols ≤ nrows`) by classical Gram–Schmidt with
/// one reorthogonalization pass. Columns already in the span of their
/// predecessors get a zero column in `Q` and a zero diagonal in `R`.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, r) = a.shape();
    let mut q = DMatrix::zeros(m, r);
    let mut rr = DMatrix::zeros(r, r);
    let mut h = vec![0.0; r];
    let mut w = vec![0.0; m];
    let qs = q.as_mut_slice();
    for j in 0..r {
        w.copy_from_slice(&a.as_slice()[j * m..(j + 1) * m]);
        let norm0 = dot(&w, &w).sqrt();
        for _ in 0..if j > 0 { 2 } else { 0 } {
            let done = &qs[..j * m];
            for (hi, qi) in h[..j].iter_mut().zip(done.chunks_exact(m)) {
                *hi = dot(qi, &w);
            }
            for (&hi, qi) in h[..j].iter().zip(done.chunks_exact(m)) {
                for (wk, qk) in w.iter_mut().zip(qi) {
                    *wk -= hi * qk;
                }
            }
            for (i, &hi) in h[..j].iter().enumerate() {
                rr[(i, j)] += hi;
            }
        }
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-14 * norm0 && norm > 0.0 {
            rr[(j, j)] = norm;
            for (qk, wk) in qs[j * m..(j + 1) * m].iter_mut().zip(&w) {
                *qk = wk / norm;
            }
        }
    }
    (q, rr)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the loop vectorize
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Best truncated factorization of a dense block.
pub fn truncate_dense(p: &DMatrix<f64>, trunc: &Truncation) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = p.shape();
    let svd = SVD::new(p.clone(), true, true);
    let (su, svt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let k = truncated_rank(&sorted, trunc);
    let mut cu = DMatrix::zeros(m, k);
    let mut cv = DMatrix::zeros(n, k);
    for (c, &i) in order[..k].iter().enumerate() {
        cu.set_column(c, &(su.column(i) * svd.singular_values[i]));
        cv.set_column(c, &svt.row(i).transpose());
    }
    (cu, cv)
}

/// Writes `p` as a product of two factors whose inner dimension is the
/// smaller side of `p`.
pub fn dense_as_factors(p: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    if p.nrows() <= p.ncols() {
        (DMatrix::identity(p.nrows(), p.nrows()), p.transpose())
    } else {
        (p.clone(), DMatrix::identity(p.ncols(), p.ncols()))
    }
}

/// Solves `L Y = R` in place for dense lower-triangular `L`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, unit: bool, rhs: &mut DMatrixViewMut<'_, f64>) {
    let n = l.nrows();
    for c in 0..rhs.ncols() {
        for i in 0..n {
            let mut s = rhs[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * rhs[(k, c)];
            }
            rhs[(i, c)] = if unit { s } else { s / l[(i, i)] };
        }
    }
}

/// Solves `Lᵀ Y = R` in place for dense lower-triangular `L`.
pub fn solve_lower_t_in_place(l: &DMatrix<f64>, unit: bool, rhs: &mut DMatrixViewMut<'_, f64>) {
    let n = l.nrows();
    for c in 0..rhs.ncols() {
        for i in (0..n).rev() {
            let mut s = rhs[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * rhs[(k, c)];
            }
            rhs[(i, c)] = if unit { s } else { s / l[(i, i)] };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_keeps_exact_low_rank() {
        let u = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let v = DMatrix::from_fn(15, 3, |i, j| ((i * 5 + j * 2) % 13) as f64 * 0.1);
        // duplicate the columns so the stated rank is 6 but the true rank is 3
        let uu = DMatrix::from_fn(20, 6, |i, j| u[(i, j % 3)]);
        let vv = DMatrix::from_fn(15, 6, |i, j| v[(i, j % 3)] * 0.5);
        let (a, b) = truncate(&uu, &vv, &Truncation::new(1e-12, 100));
        assert_eq!(a.ncols(), 3);
        let err = (&a * b.transpose() - &u * v.transpose()).norm() / (&u * v.transpose()).norm();
        assert!(err < 1e-13);
    }

    #[test]
    fn rank_rule() {
        let sv = [10.0, 1.0, 1e-3, 1e-7];
        assert_eq!(truncated_rank(&sv, &Truncation::new(1e-2, 99)), 2);
        assert_eq!(truncated_rank(&sv, &Truncation::new(1e-6, 99)), 3);
        assert_eq!(truncated_rank(&sv, &Truncation::new(1e-6, 1)), 1);
        assert_eq!(truncated_rank(&[0.0, 0.0], &Truncation::new(1e-6, 9)), 0);
    }

    #[test]
    fn triangular_solves() {
        let l = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 4.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 0.0]);
        let mut b = &l * &x;
        solve_lower_in_place(&l, false, &mut b.view_mut((0, 0), (3, 2)));
        assert!((&b - &x).norm() < 1e-14);
        let mut b = l.transpose() * &x;
        solve_lower_t_in_place(&l, false, &mut b.view_mut((0, 0), (3, 2)));
        assert!((&b - &x).norm() < 1e-14);
    }
}
