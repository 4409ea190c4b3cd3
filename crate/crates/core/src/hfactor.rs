//! H-Cholesky and H-LDLᵀ factorization, triangular solves, log-determinant.
//!
//! The recursion on a split diagonal block is
//! `factor(A11)`, `L21 = A21 L11⁻ᵀ D1⁻¹`, `A22 -= L21 D1 L21ᵀ`, `factor(A22)`,
//! with every low-rank result truncated at the factorization tolerance.
//! All arithmetic runs in cluster-tree order; public vectors are in original
//! order.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};
use crate::hmatrix::{ApproxMode, HMatrix, HNode, LowRankBlock, SplitNode, Upper, MAX_ACA_RANK};
use crate::linalg::{dense_as_factors, solve_lower_in_place, solve_lower_t_in_place, truncate, Truncation};

/// Pivots with `|p| ≤ CLAMP_REL · max_diag` that come out negative are clamped
/// to `+CLAMP_REL · max_diag` in the LDL path.
pub const CLAMP_REL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorForm {
    Cholesky,
    Ldl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorStatus {
    Success,
    /// Tiny negative LDL pivots were clamped.
    Clamped,
    /// Negative LDL pivots were recorded; the log-determinant is undefined.
    Indefinite,
}

/// Lower-triangular H-factor with optional diagonal.
#[derive(Clone, Debug)]
pub struct HFactor {
    l: HMatrix,
    /// Pivots in tree order (LDL form only).
    d: Option<Vec<f64>>,
    form: FactorForm,
    eps_f: f64,
    clamped: usize,
    /// `(original index, pivot)` of negative pivots.
    negative: Vec<(usize, f64)>,
}

struct Ctx<'a> {
    form: FactorForm,
    trunc: Truncation,
    max_diag: f64,
    perm: &'a [usize],
    clamped: usize,
    negative: Vec<(usize, f64)>,
}

/// H-Cholesky factorization `C̃ = L̃ L̃ᵀ`.
pub fn h_cholesky(h: &HMatrix, eps_f: f64) -> Result<HFactor> {
    factorize(h, eps_f, FactorForm::Cholesky)
}

/// Square-root-free factorization `C̃ = L̃ D̃ L̃ᵀ` with unit-diagonal `L̃`.
pub fn h_ldl(h: &HMatrix, eps_f: f64) -> Result<HFactor> {
    factorize(h, eps_f, FactorForm::Ldl)
}

fn factorize(h: &HMatrix, eps_f: f64, form: FactorForm) -> Result<HFactor> {
    if !h.is_symmetric() {
        return Err(Error::InvalidInput("factorization needs a symmetric H-matrix".into()));
    }
    if !(eps_f > 0.0 && eps_f.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid factorization tolerance {eps_f}")));
    }
    let max_rank = match h.mode() {
        ApproxMode::FixedRank(k) => k,
        ApproxMode::FixedAccuracy(_) => MAX_ACA_RANK,
    };
    let n = h.nrows();
    let mut root = h.root().clone();
    let mut diag = Vec::with_capacity(n);
    collect_diagonal(&root, &mut diag);
    let max_diag = diag.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mut ctx = Ctx {
        form,
        trunc: Truncation::new(eps_f, max_rank),
        max_diag,
        perm: h.tree().rows().perm(),
        clamped: 0,
        negative: Vec::new(),
    };
    let mut d = vec![0.0; n];
    factor_node(&mut root, &mut d, 0, &mut ctx)?;
    let l = HMatrix::from_parts(h.tree().clone(), root, h.mode(), false);
    Ok(HFactor {
        l,
        d: (form == FactorForm::Ldl).then_some(d),
        form,
        eps_f,
        clamped: ctx.clamped,
        negative: ctx.negative,
    })
}

fn collect_diagonal(node: &HNode, out: &mut Vec<f64>) {
    match node {
        HNode::Dense(m) => out.extend((0..m.nrows()).map(|i| m[(i, i)])),
        HNode::Split(s) => {
            let nc = s.col_sizes.len();
            for i in 0..s.row_sizes.len() {
                collect_diagonal(&s.children[i * nc + i], out);
            }
        }
        _ => {}
    }
}

impl HFactor {
    pub fn form(&self) -> FactorForm {
        self.form
    }

    pub fn eps_f(&self) -> f64 {
        self.eps_f
    }

    /// The lower factor `L̃` (upper blocks read as zero).
    pub fn l(&self) -> &HMatrix {
        &self.l
    }

    /// `D̃` in original order (LDL form only).
    pub fn d(&self) -> Option<Vec<f64>> {
        self.d.as_ref().map(|d| self.l.tree().rows().to_original_order(d))
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn clamped_pivots(&self) -> usize {
        self.clamped
    }

    pub fn negative_pivots(&self) -> &[(usize, f64)] {
        &self.negative
    }

    pub fn status(&self) -> FactorStatus {
        if !self.negative.is_empty() {
            FactorStatus::Indefinite
        } else if self.clamped > 0 {
            FactorStatus::Clamped
        } else {
            FactorStatus::Success
        }
    }

    fn check_len(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: b.len() });
        }
        Ok(())
    }

    /// Solves `L̃ v = P b` and returns `v` in tree order.
    pub(crate) fn forward_tree(&self, b: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(b)?;
        let mut x = DMatrix::from_column_slice(b.len(), 1, &self.l.tree().rows().to_tree_order(b));
        solve_lower_multi(self.l.root(), &mut x.as_view_mut());
        Ok(x)
    }

    /// Pivots in tree order (LDL form only).
    pub(crate) fn d_tree(&self) -> Option<&[f64]> {
        self.d.as_deref()
    }

    /// Solves `L̃ v = b` with `b` and `v` in original order.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        let v = self.forward_tree(b)?;
        Ok(self.l.tree().rows().to_original_order(v.as_slice()))
    }

    /// Solves `C̃ x = b` through the factor.
    pub fn solve_factored(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        let rows = self.l.tree().rows();
        let mut x = DMatrix::from_column_slice(b.len(), 1, &rows.to_tree_order(b));
        self.solve_tree_multi(&mut x);
        Ok(rows.to_original_order(x.as_slice()))
    }

    /// Solves `C̃ X = B` in place for a multi-vector in tree order.
    pub(crate) fn solve_tree_multi(&self, x: &mut DMatrix<f64>) {
        solve_lower_multi(self.l.root(), &mut x.as_view_mut());
        if let Some(d) = &self.d {
            for (i, &di) in d.iter().enumerate() {
                x.row_mut(i).unscale_mut(di);
            }
        }
        solve_lower_t_multi(self.l.root(), &mut x.as_view_mut());
    }

    /// `log det C̃`.
    pub fn log_det(&self) -> Result<f64> {
        match &self.d {
            Some(d) => {
                if let Some(&(index, value)) = self.negative.first() {
                    return Err(Error::IndefiniteFactor { index, value });
                }
                let perm = self.l.tree().rows().perm();
                let mut s = 0.0;
                for (i, &di) in d.iter().enumerate() {
                    if di <= 0.0 || !di.is_finite() {
                        return Err(Error::IndefiniteFactor { index: perm[i], value: di });
                    }
                    s += di.ln();
                }
                Ok(s)
            }
            None => {
                let mut diag = Vec::with_capacity(self.n());
                collect_diagonal(self.l.root(), &mut diag);
                Ok(2.0 * diag.iter().map(|x| x.ln()).sum::<f64>())
            }
        }
    }

    /// Dense `L̃ D̃ L̃ᵀ` (or `L̃ L̃ᵀ`) in original order, for small `n`.
    pub fn reconstruct(&self) -> Result<DMatrix<f64>> {
        let l = self.l.to_dense()?;
        Ok(match self.d() {
            Some(d) => {
                let mut ld = l.clone();
                for (j, dj) in d.iter().enumerate() {
                    ld.column_mut(j).scale_mut(*dj);
                }
                ld * l.transpose()
            }
            None => &l * l.transpose(),
        })
    }
}

fn factor_node(node: &mut HNode, d: &mut [f64], offset: usize, ctx: &mut Ctx<'_>) -> Result<()> {
    match node {
        HNode::Dense(a) => factor_dense(a, d, offset, ctx),
        HNode::Split(s) => {
            debug_assert!(s.row_sizes.len() == 2 && s.col_sizes.len() == 2);
            flush(s, &ctx.trunc);
            let s0 = s.row_sizes[0];
            let (d1, d2) = d.split_at_mut(s0);
            let (first, rest) = s.children.split_at_mut(2);
            let (lower, last) = rest.split_at_mut(1);
            let (l11, a21, a22) = (&mut first[0], &mut lower[0], &mut last[0]);
            factor_node(l11, d1, offset, ctx)?;
            solve_right_lt(l11, a21, &ctx.trunc);
            match ctx.form {
                FactorForm::Cholesky => addmul(a22, -1.0, a21, a21, &ctx.trunc, true),
                FactorForm::Ldl => {
                    let w = a21.clone();
                    scale_cols(a21, &d1.iter().map(|x| 1.0 / x).collect::<Vec<_>>());
                    addmul(a22, -1.0, &w, a21, &ctx.trunc, true);
                }
            }
            factor_node(a22, d2, offset + s0, ctx)
        }
        _ => unreachable!("diagonal block must be dense or split"),
    }
}

fn factor_dense(a: &mut DMatrix<f64>, d: &mut [f64], offset: usize, ctx: &mut Ctx<'_>) -> Result<()> {
    let m = a.nrows();
    for j in 0..m {
        let mut p = a[(j, j)];
        for k in 0..j {
            let ljk = a[(j, k)];
            p -= match ctx.form {
                FactorForm::Ldl => ljk * ljk * d[k],
                FactorForm::Cholesky => ljk * ljk,
            };
        }
        let index = ctx.perm[offset + j];
        if !p.is_finite() || p == 0.0 {
            return Err(Error::NotSpd { index, value: p });
        }
        let pivot = match ctx.form {
            FactorForm::Cholesky => {
                if p < 0.0 {
                    return Err(Error::NotSpd { index, value: p });
                }
                p.sqrt()
            }
            FactorForm::Ldl => {
                if p < 0.0 {
                    if p.abs() <= CLAMP_REL * ctx.max_diag {
                        p = CLAMP_REL * ctx.max_diag;
                        ctx.clamped += 1;
                    } else {
                        ctx.negative.push((index, p));
                    }
                }
                d[j] = p;
                p
            }
        };
        for i in j + 1..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= match ctx.form {
                    FactorForm::Ldl => a[(i, k)] * a[(j, k)] * d[k],
                    FactorForm::Cholesky => a[(i, k)] * a[(j, k)],
                };
            }
            a[(i, j)] = s / pivot;
        }
        a[(j, j)] = match ctx.form {
            FactorForm::Ldl => 1.0,
            FactorForm::Cholesky => pivot,
        };
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L X = B` in place; `l` is a lower-triangular diagonal block.
pub(crate) fn solve_lower_multi(l: &HNode, x: &mut DMatrixViewMut<'_, f64>) {
    match l {
        HNode::Dense(m) => solve_lower_in_place(m, false, x),
        HNode::Split(s) => {
            let s0 = s.row_sizes[0];
            let n = x.nrows();
            let (mut x1, mut x2) = x.rows_range_pair_mut(0..s0, s0..n);
            solve_lower_multi(&s.children[0], &mut x1);
            s.children[2].mul_add(-1.0, &x1.rows(0, s0), &mut x2, Upper::Zero);
            solve_lower_multi(&s.children[3], &mut x2);
        }
        _ => unreachable!(),
    }
}

/// Solves `Lᵀ X = B` in place.
pub(crate) fn solve_lower_t_multi(l: &HNode, x: &mut DMatrixViewMut<'_, f64>) {
    match l {
        HNode::Dense(m) => solve_lower_t_in_place(m, false, x),
        HNode::Split(s) => {
            let s0 = s.row_sizes[0];
            let n = x.nrows();
            let (mut x1, mut x2) = x.rows_range_pair_mut(0..s0, s0..n);
            solve_lower_t_multi(&s.children[3], &mut x2);
            s.children[2].mul_t_add(-1.0, &x2.rows(0, n - s0), &mut x1, Upper::Zero);
            solve_lower_t_multi(&s.children[0], &mut x1);
        }
        _ => unreachable!(),
    }
}

/// `B := B L⁻ᵀ` for a lower-triangular diagonal block `l`.
fn solve_right_lt(l: &HNode, b: &mut HNode, trunc: &Truncation) {
    match b {
        HNode::LowRank(lr) => {
            if lr.rank() > 0 {
                solve_lower_multi(l, &mut lr.v.as_view_mut());
            }
        }
        HNode::Dense(m) => {
            let mut t = m.transpose();
            solve_lower_multi(l, &mut t.as_view_mut());
            *m = t.transpose();
        }
        HNode::Split(s) => {
            flush(s, trunc);
            let nc = s.col_sizes.len();
            match (l, nc) {
                (HNode::Split(ls), 2) => {
                    for row in s.children.chunks_mut(2) {
                        let (b0, b1) = row.split_at_mut(1);
                        solve_right_lt(&ls.children[0], &mut b0[0], trunc);
                        addmul(&mut b1[0], -1.0, &b0[0], &ls.children[2], trunc, false);
                        solve_right_lt(&ls.children[3], &mut b1[0], trunc);
                    }
                }
                (_, 1) => {
                    for c in s.children.iter_mut() {
                        solve_right_lt(l, c, trunc);
                    }
                }
                _ => unreachable!("block structure mismatch"),
            }
        }
        HNode::Implicit => {}
    }
}

/// Scales column `j` of the block by `s[j]`.
fn scale_cols(node: &mut HNode, s: &[f64]) {
    match node {
        HNode::Dense(m) => {
            for (j, &sj) in s.iter().enumerate() {
                m.column_mut(j).scale_mut(sj);
            }
        }
        HNode::LowRank(lr) => {
            for (j, &sj) in s.iter().enumerate() {
                lr.v.row_mut(j).scale_mut(sj);
            }
        }
        HNode::Split(sp) => {
            let co = sp.col_offsets();
            let nc = sp.col_sizes.len();
            for (k, c) in sp.children.iter_mut().enumerate() {
                let j = k % nc;
                scale_cols(c, &s[co[j]..co[j] + sp.col_sizes[j]]);
            }
        }
        HNode::Implicit => {}
    }
}

/// `C += alpha · A · Bᵀ` with truncation of low-rank results. `diag` marks a
/// symmetric diagonal target whose implicit upper blocks are skipped.
fn addmul(c: &mut HNode, alpha: f64, a: &HNode, b: &HNode, trunc: &Truncation, diag: bool) {
    match (&mut *c, a, b) {
        (HNode::Implicit, _, _) => {}
        (HNode::Split(cs), HNode::Split(sa), HNode::Split(sb)) => {
            let nc = cs.col_sizes.len();
            let (na, nb) = (sa.col_sizes.len(), sb.col_sizes.len());
            debug_assert_eq!(na, nb);
            for (k, child) in cs.children.iter_mut().enumerate() {
                let (i, j) = (k / nc, k % nc);
                if diag && j > i {
                    continue;
                }
                let pairs = (0..na).map(|p| (&sa.children[i * na + p], &sb.children[j * nb + p]));
                if let HNode::LowRank(_) = child {
                    // one truncation for the whole inner sum
                    let parts: Vec<LowRankBlock> = pairs.map(|(x, y)| product_lowrank(x, y, trunc)).collect();
                    let (u, v) = stack_lowrank(&parts);
                    add_lowrank(child, alpha, &u.as_view(), &v.as_view(), trunc);
                } else {
                    for (x, y) in pairs {
                        addmul(child, alpha, x, y, trunc, diag && i == j);
                    }
                }
            }
        }
        (HNode::Dense(m), _, _) => {
            let p = product_dense(a, b);
            *m += p * alpha;
        }
        (HNode::LowRank(_), _, _) | (HNode::Split(_), _, _) => {
            let p = product_lowrank(a, b, trunc);
            add_lowrank(c, alpha, &p.u.as_view(), &p.v.as_view(), trunc);
        }
    }
}

fn add_lowrank(c: &mut HNode, alpha: f64, u: &DMatrixView<'_, f64>, v: &DMatrixView<'_, f64>, trunc: &Truncation) {
    if u.ncols() == 0 {
        return;
    }
    match c {
        HNode::Implicit => {}
        HNode::Dense(m) => m.gemm(alpha, u, &v.transpose(), 1.0),
        HNode::LowRank(lr) => {
            let (m, n, r0, r1) = (lr.u.nrows(), lr.v.nrows(), lr.rank(), u.ncols());
            let mut nu = DMatrix::zeros(m, r0 + r1);
            let mut nv = DMatrix::zeros(n, r0 + r1);
            nu.columns_mut(0, r0).copy_from(&lr.u);
            nu.columns_mut(r0, r1).copy_from(&(u * alpha));
            nv.columns_mut(0, r0).copy_from(&lr.v);
            nv.columns_mut(r0, r1).copy_from(v);
            (lr.u, lr.v) = truncate(&nu, &nv, trunc);
        }
        HNode::Split(s) => {
            let (pu, pv) = match s.pending.take() {
                Some(p) => (hcat(&p.u, &(u * alpha)), hcat(&p.v, &v.clone_owned())),
                None => ((u * alpha), v.clone_owned()),
            };
            let (pu, pv) = truncate(&pu, &pv, trunc);
            s.pending = Some(LowRankBlock { u: pu, v: pv });
        }
    }
}

/// Pushes a pending update of a split block one level down.
fn flush(s: &mut SplitNode, trunc: &Truncation) {
    if let Some(p) = s.pending.take() {
        let (ro, co) = (s.row_offsets(), s.col_offsets());
        let nc = s.col_sizes.len();
        for (k, child) in s.children.iter_mut().enumerate() {
            let (i, j) = (k / nc, k % nc);
            add_lowrank(
                child,
                1.0,
                &p.u.rows(ro[i], s.row_sizes[i]),
                &p.v.rows(co[j], s.col_sizes[j]),
                trunc,
            );
        }
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `A Bᵀ` as a low-rank block.
fn product_lowrank(a: &HNode, b: &HNode, trunc: &Truncation) -> LowRankBlock {
    let (m, n) = (a.nrows(), b.nrows());
    match (a, b) {
        (HNode::LowRank(la), _) => LowRankBlock { u: la.u.clone(), v: b.mul(&la.v, n, Upper::Zero) },
        (_, HNode::LowRank(lb)) => LowRankBlock { u: a.mul(&lb.v, m, Upper::Zero), v: lb.u.clone() },
        (HNode::Dense(da), _) => {
            let v = b.mul(&da.transpose(), n, Upper::Zero);
            if m <= n {
                LowRankBlock { u: DMatrix::identity(m, m), v }
            } else {
                let (u, v) = dense_as_factors(&v.transpose());
                LowRankBlock { u, v }
            }
        }
        (_, HNode::Dense(db)) => {
            let u = a.mul(&db.transpose(), m, Upper::Zero);
            let (u, v) = dense_as_factors(&u);
            LowRankBlock { u, v }
        }
        (HNode::Split(sa), HNode::Split(sb)) => {
            let (ro, co) = (sa.row_offsets(), sb.row_offsets());
            let (na, nb) = (sa.col_sizes.len(), sb.col_sizes.len());
            let mut parts = Vec::new();
            for i in 0..sa.row_sizes.len() {
                for j in 0..sb.row_sizes.len() {
                    for p in 0..na.min(nb) {
                        let q = product_lowrank(&sa.children[i * na + p], &sb.children[j * nb + p], trunc);
                        parts.push((ro[i], co[j], q));
                    }
                }
            }
            let r: usize = parts.iter().map(|(_, _, q)| q.rank()).sum();
            let mut u = DMatrix::zeros(m, r);
            let mut v = DMatrix::zeros(n, r);
            let mut at = 0;
            for (r0, c0, q) in &parts {
                let k = q.rank();
                u.view_mut((*r0, at), (q.u.nrows(), k)).copy_from(&q.u);
                v.view_mut((*c0, at), (q.v.nrows(), k)).copy_from(&q.v);
                at += k;
            }
            let (u, v) = truncate(&u, &v, trunc);
            LowRankBlock { u, v }
        }
        _ => LowRankBlock::zeros(m, n),
    }
}

/// Concatenates the factors of several blocks of equal shape.
fn stack_lowrank(parts: &[LowRankBlock]) -> (DMatrix<f64>, DMatrix<f64>) {
    let r: usize = parts.iter().map(|q| q.rank()).sum();
    let (m, n) = (parts[0].u.nrows(), parts[0].v.nrows());
    let mut u = DMatrix::zeros(m, r);
    let mut v = DMatrix::zeros(n, r);
    let mut at = 0;
    for q in parts {
        u.columns_mut(at, q.rank()).copy_from(&q.u);
        v.columns_mut(at, q.rank()).copy_from(&q.v);
        at += q.rank();
    }
    (u, v)
}

/// `A Bᵀ` as a dense block; used when the target is a small dense leaf.
fn product_dense(a: &HNode, b: &HNode) -> DMatrix<f64> {
    let (m, n) = (a.nrows(), b.nrows());
    match (a, b) {
        (HNode::LowRank(la), _) => &la.u * b.mul(&la.v, n, Upper::Zero).transpose(),
        (_, HNode::LowRank(lb)) => a.mul(&lb.v, m, Upper::Zero) * lb.u.transpose(),
        (_, HNode::Implicit) | (HNode::Implicit, _) => DMatrix::zeros(m, n),
        _ => {
            let bd = b.to_dense_local(Upper::Zero);
            a.mul(&bd.transpose(), m, Upper::Zero)
        }
    }
}
