//! H-matrix approximation of covariance matrices.
//!
//! Dense leaves of the block cluster tree are filled entry by entry,
//! admissible leaves by partially pivoted adaptive cross approximation
//! (ACA), which samples single rows and columns and never forms the block.
//! Symmetric matrices store only the lower block triangle.

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rayon::prelude::*;

use crate::covkernel::{MaternKernel, MaternParams};
use crate::error::{Error, Result};
use crate::geometry::{BlockClusterTree, BlockKind};
use crate::linalg::{truncate, Truncation};

/// Largest rank ACA may produce on any block.
pub const MAX_ACA_RANK: usize = 256;
/// ACA results above this rank are recompressed by SVD truncation.
pub const RECOMPRESS_ABOVE: usize = 16;
/// Size limit for dense reconstruction.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ApproxMode {
    /// At most `k` ACA terms per admissible block.
    FixedRank(usize),
    /// ACA stops at relative accuracy `eps` per admissible block.
    FixedAccuracy(f64),
}

impl ApproxMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ApproxMode::FixedRank(k) if k >= 1 => Ok(()),
            ApproxMode::FixedAccuracy(e) if e > 0.0 && e.is_finite() => Ok(()),
            m => Err(Error::InvalidInput(format!("invalid approximation mode {m:?}"))),
        }
    }
}

/// `u vᵀ` with `u: m×r`, `v: n×r`.
#[derive(Clone, Debug)]
pub struct LowRankBlock {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRankBlock {
    pub fn zeros(m: usize, n: usize) -> Self {
        LowRankBlock { u: DMatrix::zeros(m, 0), v: DMatrix::zeros(n, 0) }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }
}

/// How the `Implicit` upper child of a split diagonal block is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upper {
    /// Transpose of the lower sibling (symmetric matrix).
    Mirror,
    /// Zero (lower-triangular factor).
    Zero,
}

#[derive(Clone, Debug)]
pub struct SplitNode {
    pub row_sizes: Vec<usize>,
    pub col_sizes: Vec<usize>,
    /// Row-major over `row_sizes × col_sizes`.
    pub children: Vec<HNode>,
    /// Low-rank update not yet pushed to the children; only non-empty
    /// during factorization.
    pub(crate) pending: Option<LowRankBlock>,
}

impl SplitNode {
    pub fn child(&self, i: usize, j: usize) -> &HNode {
        &self.children[i * self.col_sizes.len() + j]
    }

    pub fn row_offsets(&self) -> Vec<usize> {
        offsets(&self.row_sizes)
    }

    pub fn col_offsets(&self) -> Vec<usize> {
        offsets(&self.col_sizes)
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect()
}

/// Recursive block payload. Indices are local to the block, in tree order.
#[derive(Clone, Debug)]
pub enum HNode {
    Dense(DMatrix<f64>),
    LowRank(LowRankBlock),
    Split(SplitNode),
    /// Upper off-diagonal child of a split diagonal block; see [`Upper`].
    Implicit,
}

impl HNode {
    /// `y += alpha · A · x`.
    pub fn mul_add(&self, alpha: f64, x: &DMatrixView<'_, f64>, y: &mut DMatrixViewMut<'_, f64>, upper: Upper) {
        match self {
            HNode::Dense(m) => y.gemm(alpha, m, x, 1.0),
            HNode::LowRank(lr) => {
                if lr.rank() > 0 {
                    let t = lr.v.tr_mul(x);
                    y.gemm(alpha, &lr.u, &t, 1.0);
                }
            }
            HNode::Split(s) => {
                let (ro, co) = (s.row_offsets(), s.col_offsets());
                let nc = s.col_sizes.len();
                for (i, (&r0, &rs)) in ro.iter().zip(&s.row_sizes).enumerate() {
                    for (j, (&c0, &cs)) in co.iter().zip(&s.col_sizes).enumerate() {
                        let xs = x.rows(c0, cs);
                        let mut ys = y.rows_mut(r0, rs);
                        match &s.children[i * nc + j] {
                            HNode::Implicit => {
                                if upper == Upper::Mirror {
                                    s.children[j * nc + i].mul_t_add(alpha, &xs, &mut ys, upper);
                                }
                            }
                            c => c.mul_add(alpha, &xs, &mut ys, upper),
                        }
                    }
                }
            }
            HNode::Implicit => {}
        }
    }

    /// `y += alpha · Aᵀ · x`.
    pub fn mul_t_add(&self, alpha: f64, x: &DMatrixView<'_, f64>, y: &mut DMatrixViewMut<'_, f64>, upper: Upper) {
        match self {
            HNode::Dense(m) => y.gemm_tr(alpha, m, x, 1.0),
            HNode::LowRank(lr) => {
                if lr.rank() > 0 {
                    let t = lr.u.tr_mul(x);
                    y.gemm(alpha, &lr.v, &t, 1.0);
                }
            }
            HNode::Split(s) => {
                let (ro, co) = (s.row_offsets(), s.col_offsets());
                let nc = s.col_sizes.len();
                for (i, (&r0, &rs)) in ro.iter().zip(&s.row_sizes).enumerate() {
                    for (j, (&c0, &cs)) in co.iter().zip(&s.col_sizes).enumerate() {
                        // block (i, j) of A contributes to rows j of Aᵀ·x from x rows i
                        let xs = x.rows(r0, rs);
                        let mut ys = y.rows_mut(c0, cs);
                        match &s.children[i * nc + j] {
                            HNode::Implicit => {
                                if upper == Upper::Mirror {
                                    s.children[j * nc + i].mul_add(alpha, &xs, &mut ys, upper);
                                }
                            }
                            c => c.mul_t_add(alpha, &xs, &mut ys, upper),
                        }
                    }
                }
            }
            HNode::Implicit => {}
        }
    }

    /// `A · x` for a dense multi-vector `x`.
    pub fn mul(&self, x: &DMatrix<f64>, rows: usize, upper: Upper) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(rows, x.ncols());
        self.mul_add(1.0, &x.as_view(), &mut y.as_view_mut(), upper);
        y
    }

    pub fn nrows(&self) -> usize {
        match self {
            HNode::Dense(m) => m.nrows(),
            HNode::LowRank(lr) => lr.u.nrows(),
            HNode::Split(s) => s.row_sizes.iter().sum(),
            HNode::Implicit => 0,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            HNode::Dense(m) => m.ncols(),
            HNode::LowRank(lr) => lr.v.nrows(),
            HNode::Split(s) => s.col_sizes.iter().sum(),
            HNode::Implicit => 0,
        }
    }

    /// Dense copy in local tree order.
    pub fn to_dense_local(&self, upper: Upper) -> DMatrix<f64> {
        match self {
            HNode::Dense(m) => m.clone(),
            HNode::LowRank(lr) => lr.to_dense(),
            HNode::Split(s) => {
                let mut out = DMatrix::zeros(self.nrows(), self.ncols());
                let (ro, co) = (s.row_offsets(), s.col_offsets());
                let nc = s.col_sizes.len();
                for (i, (&r0, &rs)) in ro.iter().zip(&s.row_sizes).enumerate() {
                    for (j, (&c0, &cs)) in co.iter().zip(&s.col_sizes).enumerate() {
                        let block = match &s.children[i * nc + j] {
                            HNode::Implicit => match upper {
                                Upper::Mirror => s.children[j * nc + i].to_dense_local(upper).transpose(),
                                Upper::Zero => DMatrix::zeros(rs, cs),
                            },
                            c => c.to_dense_local(upper),
                        };
                        out.view_mut((r0, c0), (rs, cs)).copy_from(&block);
                    }
                }
                out
            }
            HNode::Implicit => DMatrix::zeros(0, 0),
        }
    }

    /// Logical payload size in scalars, counting implicit blocks at the size
    /// of their mirror.
    pub fn scalars(&self) -> usize {
        match self {
            HNode::Dense(m) => m.len(),
            HNode::LowRank(lr) => lr.u.len() + lr.v.len(),
            HNode::Split(s) => {
                let nc = s.col_sizes.len();
                s.children
                    .iter()
                    .enumerate()
                    .map(|(k, c)| match c {
                        HNode::Implicit => s.children[(k % nc) * nc + k / nc].scalars(),
                        c => c.scalars(),
                    })
                    .sum()
            }
            HNode::Implicit => 0,
        }
    }

    /// Visits every stored low-rank block.
    pub fn for_each_low_rank(&self, f: &mut impl FnMut(&LowRankBlock)) {
        match self {
            HNode::LowRank(lr) => f(lr),
            HNode::Split(s) => s.children.iter().for_each(|c| c.for_each_low_rank(f)),
            _ => {}
        }
    }
}

/// H-matrix over a block cluster tree.
#[derive(Clone, Debug)]
pub struct HMatrix {
    tree: Arc<BlockClusterTree>,
    root: HNode,
    mode: ApproxMode,
    symmetric: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageStats {
    pub bytes: usize,
    /// `bytes / (rows · cols · 8)`.
    pub ratio: f64,
}

impl HMatrix {
    /// Assembles the Matérn covariance matrix of the locations held by `tree`.
    pub fn assemble(tree: &Arc<BlockClusterTree>, params: &MaternParams, mode: ApproxMode) -> Result<Self> {
        params.validate()?;
        let kernel = MaternKernel::new(*params);
        let rows = tree.rows().clone();
        let cols = tree.cols().clone();
        let (rp, cp) = (rows.points(), cols.points());
        let (rperm, cperm) = (rows.perm(), cols.perm());
        Self::from_tree_entries(tree, mode, |i, j| kernel.entry(rperm[i], cperm[j], &rp[i], &cp[j]))
    }

    /// Assembles from an entry function of original (unpermuted) indices.
    /// The function must be symmetric when rows and columns share one tree.
    pub fn from_entries<F>(tree: &Arc<BlockClusterTree>, mode: ApproxMode, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let rperm = tree.rows().perm().to_vec();
        let cperm = tree.cols().perm().to_vec();
        Self::from_tree_entries(tree, mode, |i, j| entry(rperm[i], cperm[j]))
    }

    /// Assembles from a dense matrix in original order.
    pub fn from_dense(tree: &Arc<BlockClusterTree>, mode: ApproxMode, a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != tree.rows().len() || a.ncols() != tree.cols().len() {
            return Err(Error::DimensionMismatch { expected: tree.rows().len(), got: a.nrows() });
        }
        Self::from_entries(tree, mode, |i, j| a[(i, j)])
    }

    fn from_tree_entries<F>(tree: &Arc<BlockClusterTree>, mode: ApproxMode, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        mode.validate()?;
        let symmetric = tree.is_symmetric();
        let root = build_node(tree, tree.root(), mode, &entry, symmetric);
        Ok(HMatrix { tree: tree.clone(), root, mode, symmetric })
    }

    /// Wraps an existing payload; used for factors.
    pub(crate) fn from_parts(tree: Arc<BlockClusterTree>, root: HNode, mode: ApproxMode, symmetric: bool) -> Self {
        HMatrix { tree, root, mode, symmetric }
    }

    pub fn tree(&self) -> &Arc<BlockClusterTree> {
        &self.tree
    }

    pub fn root(&self) -> &HNode {
        &self.root
    }

    pub fn mode(&self) -> ApproxMode {
        self.mode
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nrows(&self) -> usize {
        self.tree.rows().len()
    }

    pub fn ncols(&self) -> usize {
        self.tree.cols().len()
    }

    fn upper(&self) -> Upper {
        if self.symmetric {
            Upper::Mirror
        } else {
            Upper::Zero
        }
    }

    /// `y = C̃ x` with `x`, `y` in original order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch { expected: self.ncols(), got: x.len() });
        }
        let xt = DMatrix::from_column_slice(x.len(), 1, &self.tree.cols().to_tree_order(x));
        let y = self.root.mul(&xt, self.nrows(), self.upper());
        Ok(self.tree.rows().to_original_order(y.as_slice()))
    }

    /// Dense reconstruction in original order.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let (m, n) = (self.nrows(), self.ncols());
        if m.max(n) > DENSE_LIMIT {
            return Err(Error::TooLarge { n: m.max(n), limit: DENSE_LIMIT });
        }
        let local = self.root.to_dense_local(self.upper());
        let (rp, cp) = (self.tree.rows().perm(), self.tree.cols().perm());
        let mut out = DMatrix::zeros(m, n);
        for b in 0..n {
            for a in 0..m {
                out[(rp[a], cp[b])] = local[(a, b)];
            }
        }
        Ok(out)
    }

    pub fn storage_bytes(&self) -> StorageStats {
        let bytes = self.root.scalars() * std::mem::size_of::<f64>();
        let dense = self.nrows() * self.ncols() * std::mem::size_of::<f64>();
        StorageStats { bytes, ratio: bytes as f64 / dense as f64 }
    }

    /// Largest rank over all low-rank leaves.
    pub fn max_rank(&self) -> usize {
        let mut r = 0;
        self.root.for_each_low_rank(&mut |lr| r = r.max(lr.rank()));
        r
    }
}

fn build_node<F>(tree: &BlockClusterTree, id: usize, mode: ApproxMode, entry: &F, symmetric: bool) -> HNode
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let node = tree.node(id);
    let t = tree.rows().node(node.row);
    let s = tree.cols().node(node.col);
    let (r0, c0) = (t.start, s.start);
    match node.kind {
        BlockKind::Dense => HNode::Dense(DMatrix::from_fn(t.len(), s.len(), |a, b| entry(r0 + a, c0 + b))),
        BlockKind::Admissible => HNode::LowRank(aca(t.len(), s.len(), |a, b| entry(r0 + a, c0 + b), mode)),
        BlockKind::Split { .. } => {
            let diagonal = symmetric && tree.is_diagonal(id);
            let sizes = |c: &crate::geometry::Cluster, tr: &crate::geometry::ClusterTree, split: bool| {
                if split {
                    c.children.unwrap().iter().map(|&k| tr.node(k).len()).collect()
                } else {
                    vec![c.len()]
                }
            };
            let (rp, cp) = match node.kind {
                BlockKind::Split { row_parts, col_parts } => (row_parts, col_parts),
                _ => unreachable!(),
            };
            let row_sizes = sizes(t, tree.rows(), rp == 2);
            let col_sizes = sizes(s, tree.cols(), cp == 2);
            let children = node
                .children
                .par_iter()
                .enumerate()
                .map(|(k, &cid)| {
                    if diagonal && k == 1 {
                        HNode::Implicit
                    } else {
                        build_node(tree, cid, mode, entry, symmetric)
                    }
                })
                .collect();
            HNode::Split(SplitNode { row_sizes, col_sizes, children, pending: None })
        }
    }
}

// Zero residual rows tolerated before a block is declared exhausted.
const MAX_ZERO_ROWS: usize = 3;

/// Partially pivoted ACA of an `m × n` block given entry access.
///
/// The next pivot row is the unused row with the largest residual in the
/// latest column. In accuracy mode iteration stops once
/// `‖u_r‖‖v_r‖ ≤ eps · ‖Σ u_k v_kᵀ‖_F`; results above rank
/// [`RECOMPRESS_ABOVE`] are recompressed at the same accuracy.
pub fn aca<F: Fn(usize, usize) -> f64>(m: usize, n: usize, entry: F, mode: ApproxMode) -> LowRankBlock {
    let (eps, cap) = match mode {
        ApproxMode::FixedAccuracy(e) => (Some(e), MAX_ACA_RANK),
        ApproxMode::FixedRank(k) => (None, k),
    };
    let cap = cap.min(m).min(n);
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut used_rows = vec![false; m];
    let mut used_cols = vec![false; n];
    let mut norm2 = 0.0f64;
    let mut scale = 0.0f64;
    let mut zero_rows = 0;
    let mut i = 0;

    while us.len() < cap {
        let mut row: Vec<f64> = (0..n).map(|j| entry(i, j)).collect();
        for (u, v) in us.iter().zip(&vs) {
            let ui = u[i];
            if ui != 0.0 {
                row.iter_mut().zip(v).for_each(|(r, vj)| *r -= ui * vj);
            }
        }
        used_rows[i] = true;
        let pivot = (0..n).filter(|&j| !used_cols[j]).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()));
        let j = match pivot {
            Some(j) if row[j].abs() > 1e-14 * scale && row[j] != 0.0 => j,
            _ => {
                zero_rows += 1;
                match used_rows.iter().position(|u| !u) {
                    Some(next) if zero_rows <= MAX_ZERO_ROWS => {
                        i = next;
                        continue;
                    }
                    _ => break,
                }
            }
        };
        let p = row[j];
        scale = scale.max(p.abs());
        used_cols[j] = true;

        let mut col: Vec<f64> = (0..m).map(|a| entry(a, j)).collect();
        for (u, v) in us.iter().zip(&vs) {
            let vj = v[j];
            if vj != 0.0 {
                col.iter_mut().zip(u).for_each(|(c, ua)| *c -= vj * ua);
            }
        }
        row.iter_mut().for_each(|r| *r /= p);

        let uu: f64 = col.iter().map(|x| x * x).sum();
        let vv: f64 = row.iter().map(|x| x * x).sum();
        let cross: f64 = us.iter().zip(&vs).map(|(u, v)| dot(u, &col) * dot(v, &row)).sum();
        norm2 += 2.0 * cross + uu * vv;

        let next = (0..m).filter(|&a| !used_rows[a]).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()));
        us.push(col);
        vs.push(row);
        if let Some(e) = eps {
            if (uu * vv).sqrt() <= e * norm2.max(0.0).sqrt() {
                break;
            }
        }
        match next {
            Some(a) => i = a,
            None => break,
        }
    }

    let r = us.len();
    let u = DMatrix::from_fn(m, r, |a, k| us[k][a]);
    let v = DMatrix::from_fn(n, r, |b, k| vs[k][b]);
    match eps {
        Some(e) if r > RECOMPRESS_ABOVE => {
            let (u, v) = truncate(&u, &v, &Truncation::new(e, MAX_ACA_RANK));
            LowRankBlock { u, v }
        }
        _ => LowRankBlock { u, v },
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covkernel::cov_block;
    use crate::geometry::{build_block_tree, build_cluster_tree, Location};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, seed: u64) -> Vec<Location> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Location::new(rng.random(), rng.random())).collect()
    }

    fn setup(locs: &[Location], leaf: usize) -> Arc<BlockClusterTree> {
        let t = Arc::new(build_cluster_tree(locs, leaf).unwrap());
        Arc::new(build_block_tree(t.clone(), t, 2.0).unwrap())
    }

    fn dense_cov(locs: &[Location], p: &MaternParams) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..locs.len()).collect();
        cov_block(&idx, &idx, locs, p).unwrap()
    }

    #[test]
    fn aca_constant_block_is_rank_one() {
        let lr = aca(7, 5, |_, _| 0.25, ApproxMode::FixedAccuracy(1e-8));
        assert_eq!(lr.rank(), 1);
        assert!((lr.to_dense() - DMatrix::from_element(7, 5, 0.25)).norm() < 1e-15);
    }

    #[test]
    fn aca_zero_block() {
        let lr = aca(4, 6, |_, _| 0.0, ApproxMode::FixedAccuracy(1e-8));
        assert_eq!(lr.rank(), 0);
    }

    #[test]
    fn one_by_one() {
        let locs = [Location::new(0.5, 0.5)];
        let tree = setup(&locs, 32);
        let p = MaternParams::new(1.2, 0.1, 0.5, 0.3).unwrap();
        let h = HMatrix::assemble(&tree, &p, ApproxMode::FixedAccuracy(1e-6)).unwrap();
        assert_eq!(h.to_dense().unwrap()[(0, 0)], 1.5);
        let st = h.storage_bytes();
        assert_eq!(st.ratio, 1.0);
    }

    #[test]
    fn single_dense_leaf_storage_and_matvec() {
        let locs = uniform(32, 2);
        let tree = setup(&locs, 32);
        let p = MaternParams::new(1.0, 0.2, 0.5, 0.0).unwrap();
        let h = HMatrix::assemble(&tree, &p, ApproxMode::FixedAccuracy(1e-6)).unwrap();
        assert_eq!(h.storage_bytes().ratio, 1.0);
        let c = dense_cov(&locs, &p);
        let x: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let y = h.matvec(&x).unwrap();
        let want = &c * DMatrix::from_column_slice(32, 1, &x);
        for i in 0..32 {
            assert!((y[i] - want[i]).abs() < 1e-14);
        }
        assert!(h.matvec(&[0.0; 32]).unwrap().iter().all(|&v| v == 0.0));
        assert!(h.matvec(&[0.0; 3]).is_err());
    }

    #[test]
    fn accuracy_mode_matches_dense() {
        let locs = uniform(512, 11);
        let tree = setup(&locs, 32);
        let p = MaternParams::new(1.0, 0.2, 0.5, 0.0).unwrap();
        let h = HMatrix::assemble(&tree, &p, ApproxMode::FixedAccuracy(1e-6)).unwrap();
        let c = dense_cov(&locs, &p);
        let hd = h.to_dense().unwrap();
        let err = (&hd - &c).norm() / c.norm();
        assert!(err <= 1e-5, "{err}");
        assert!((&hd - hd.transpose()).norm() == 0.0);

        let ones = vec![1.0; 512];
        let y = DMatrix::from_column_slice(512, 1, &h.matvec(&ones).unwrap());
        let yc = &c * DMatrix::from_element(512, 1, 1.0);
        assert!((&y - &yc).norm() / yc.norm() <= 1e-5);
    }

    #[test]
    fn per_block_error_is_controlled() {
        let locs = uniform(512, 4);
        let tree = setup(&locs, 32);
        let p = MaternParams::new(1.0, 0.2, 1.3, 0.0).unwrap();
        let eps = 1e-6;
        let kernel = MaternKernel::new(p);
        let rt = tree.rows();
        for leaf in tree.leaves().filter(|b| b.kind == BlockKind::Admissible) {
            let (t, s) = (rt.node(leaf.row), rt.node(leaf.col));
            let pts = rt.points();
            let exact = DMatrix::from_fn(t.len(), s.len(), |a, b| kernel.cov(pts[t.start + a].dist(&pts[s.start + b])));
            let lr = aca(t.len(), s.len(), |a, b| exact[(a, b)], ApproxMode::FixedAccuracy(eps));
            let diff = lr.to_dense() - &exact;
            let spec = diff.clone().svd(false, false).singular_values.max();
            let norm = exact.clone().svd(false, false).singular_values.max();
            assert!(spec <= 10.0 * eps * norm, "{} vs {}", spec, norm);
        }
    }

    #[test]
    fn fixed_rank_errors_decrease_with_rank() {
        let locs = uniform(512, 12);
        let tree = setup(&locs, 32);
        let p = MaternParams::new(1.0, 0.2, 0.5, 0.0).unwrap();
        let c = dense_cov(&locs, &p);
        let err = |k| {
            let h = HMatrix::assemble(&tree, &p, ApproxMode::FixedRank(k)).unwrap();
            (h.to_dense().unwrap() - &c).norm()
        };
        let (e4, e16) = (err(4), err(16));
        assert!(e16 <= e4, "{e16} > {e4}");
    }

    #[test]
    fn full_rank_aca_is_exact() {
        let locs = uniform(128, 5);
        let tree = setup(&locs, 16);
        let p = MaternParams::new(1.0, 0.3, 1.1, 0.0).unwrap();
        let h = HMatrix::assemble(&tree, &p, ApproxMode::FixedRank(128)).unwrap();
        let c = dense_cov(&locs, &p);
        let err = (h.to_dense().unwrap() - &c).amax();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn permutation_consistency() {
        let locs = uniform(300, 8);
        let p = MaternParams::new(1.0, 0.15, 0.8, 0.01).unwrap();
        let mode = ApproxMode::FixedAccuracy(1e-8);
        let a = HMatrix::assemble(&setup(&locs, 16), &p, mode).unwrap().to_dense().unwrap();
        let order: Vec<usize> = (0..300).rev().collect();
        let shuffled: Vec<Location> = order.iter().map(|&i| locs[i]).collect();
        let b = HMatrix::assemble(&setup(&shuffled, 16), &p, mode).unwrap().to_dense().unwrap();
        let c = dense_cov(&locs, &p);
        let mut worst: f64 = 0.0;
        for i in 0..300 {
            for j in 0..300 {
                worst = worst.max((b[(i, j)] - a[(order[i], order[j])]).abs());
            }
        }
        assert!(worst < 1e-6 * c.norm(), "{worst}");
    }

    #[test]
    fn to_dense_guard() {
        let locs = uniform(4100, 1);
        let tree = setup(&locs, 64);
        let p = MaternParams::new(1.0, 0.1, 0.5, 0.0).unwrap();
        let h = HMatrix::assemble(&tree, &p, ApproxMode::FixedAccuracy(1e-3)).unwrap();
        assert!(matches!(h.to_dense(), Err(Error::TooLarge { .. })));
    }
}
