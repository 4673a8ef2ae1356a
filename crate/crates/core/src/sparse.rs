//! Sparse symmetric matrices and an up-looking LDLᵀ factorization.
//!
//! Matrices are stored in compressed sparse column form with both
//! triangles present. Factorization orders the unknowns with reverse
//! Cuthill–McKee, then runs an elimination-tree driven LDLᵀ without
//! pivoting. Symmetric indefinite systems are accepted as long as no pivot
//! vanishes; when one does, [`SymmetricFactor`] falls back to a dense
//! pivoted LU for moderately sized systems.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{abs, DenseLu};
use crate::{Error, Result};

/// Largest system for which the dense fallback is attempted.
pub const DENSE_FALLBACK_LIMIT: usize = 6000;

/// Symmetric matrix in CSC form, full storage, sorted row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order, so the result is deterministic.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in triplets {
            debug_assert!(r < n && c < n);
            counts[c + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[c];
            rows[slot] = r;
            vals[slot] = v;
            next[c] += 1;
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for c in 0..n {
            order.clear();
            order.extend(counts[c]..counts[c + 1]);
            // Stable sort keeps input order among duplicates.
            order.sort_by_key(|&k| rows[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(rows[k]) {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    row_idx.push(rows[k]);
                    values.push(vals[k]);
                    last = Some(rows[k]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SparseSym { n, col_ptr, row_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn from_dense(n: usize, a: &[f64]) -> Self {
        let mut t = Vec::new();
        for c in 0..n {
            for r in 0..n {
                let v = a[r * n + c];
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(n, &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for c in 0..self.n {
            for (r, v) in self.column(c) {
                a[r * self.n + c] = v;
            }
        }
        a
    }

    /// Principal submatrix on the given (ascending or not) index list.
    pub fn submatrix(&self, keep: &[usize]) -> SparseSym {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Vec::new();
        for (newc, &c) in keep.iter().enumerate() {
            for (r, v) in self.column(c) {
                if map[r] != usize::MAX {
                    t.push((map[r], newc, v));
                }
            }
        }
        SparseSym::from_triplets(keep.len(), &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(abs(*v)))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Reverse Cuthill–McKee ordering of the matrix graph.
pub fn rcm_ordering(a: &SparseSym) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|c| a.column(c).filter(|&(r, _)| r != c).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            nbrs.clear();
            nbrs.extend(a.column(i).map(|(r, _)| r).filter(|&r| !visited[r]));
            nbrs.sort_by_key(|&r| (degree[r], r));
            for &r in &nbrs {
                visited[r] = true;
                queue.push_back(r);
            }
        }
    }
    order.reverse();
    order
}

/// Sparse `P·A·Pᵀ = L·D·Lᵀ` with unit lower-triangular `L`.
#[derive(Clone, Debug)]
pub struct SparseLdl {
    n: usize,
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
}

impl SparseLdl {
    /// Factors `a`. Fails with the offending (permuted) column when a pivot
    /// falls below `1e-13 · max|a|`.
    pub fn factor(a: &SparseSym) -> core::result::Result<Self, usize> {
        let n = a.dim();
        let perm = rcm_ordering(a);
        let mut pinv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        // Upper triangle of the permuted matrix, by column.
        let mut up_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for c in 0..n {
            let pc = pinv[c];
            for (r, v) in a.column(c) {
                let pr = pinv[r];
                if pr <= pc {
                    up_cols[pc].push((pr, v));
                }
            }
        }

        // Symbolic: elimination tree and column counts.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &(i0, _) in &up_cols[k] {
                let mut i = i0;
                if i < k {
                    while flag[i] != k {
                        if parent[i] == usize::MAX {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }

        // Numeric.
        let total = l_ptr[n];
        let mut l_idx = vec![0usize; total];
        let mut l_val = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut filled = vec![0usize; n];
        flag.iter_mut().for_each(|f| *f = usize::MAX);
        let tol = 1e-13 * a.max_abs();
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for &(i0, v) in &up_cols[k] {
                let mut i = i0;
                y[i] += v;
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = l_ptr[i] + filled[i];
                for p in l_ptr[i]..p2 {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[p2] = k;
                l_val[p2] = l_ki;
                filled[i] += 1;
            }
            if !(abs(d[k]) > tol) || !d[k].is_finite() {
                return Err(k);
            }
        }
        Ok(SparseLdl { n, perm, l_ptr, l_idx, l_val, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_val.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.solve_permuted_in_place(&mut x);
        let mut out = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            out[p] = x[k];
        }
        out
    }

    fn solve_permuted_in_place(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                x[self.l_idx[p]] -= self.l_val[p] * xj;
            }
        }
        for (xj, dj) in x.iter_mut().zip(self.d.iter()) {
            *xj /= dj;
        }
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                s -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = s;
        }
    }
}

/// Diagnostics of a symmetric factorization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FactorInfo {
    pub negative_pivots: usize,
    pub dense_fallback: bool,
}

impl FactorInfo {
    pub fn indefinite(&self) -> bool {
        self.negative_pivots > 0 || self.dense_fallback
    }
}

#[derive(Clone, Debug)]
enum Backend {
    Ldl(SparseLdl),
    Dense(DenseLu),
}

/// Factorization of a symmetric (possibly indefinite) matrix.
#[derive(Clone, Debug)]
pub struct SymmetricFactor {
    backend: Backend,
    matrix: SparseSym,
    pub info: FactorInfo,
}

impl SymmetricFactor {
    /// Requires a positive definite matrix.
    pub fn factor_spd(a: &SparseSym) -> Result<Self> {
        let ldl = SparseLdl::factor(a).map_err(|k| {
            Error::Factorization(format!("zero pivot at column {k} of {}; matrix is singular", a.dim()))
        })?;
        let neg = ldl.negative_pivots();
        if neg > 0 {
            return Err(Error::Factorization(format!(
                "matrix is not positive definite ({neg} negative pivots)"
            )));
        }
        Ok(SymmetricFactor { backend: Backend::Ldl(ldl), matrix: a.clone(), info: FactorInfo::default() })
    }

    /// Accepts indefinite matrices; falls back to dense pivoted LU when the
    /// sparse LDLᵀ meets a vanishing pivot.
    pub fn factor_symmetric(a: &SparseSym) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::NonFinite("matrix to factor".into()));
        }
        match SparseLdl::factor(a) {
            Ok(ldl) => {
                let info = FactorInfo { negative_pivots: ldl.negative_pivots(), dense_fallback: false };
                Ok(SymmetricFactor { backend: Backend::Ldl(ldl), matrix: a.clone(), info })
            }
            Err(k) if a.dim() <= DENSE_FALLBACK_LIMIT => {
                log::warn!("sparse LDLᵀ hit a zero pivot at column {k}; using dense LU");
                let lu = DenseLu::factor(a.dim(), &a.to_dense())
                    .ok_or_else(|| Error::Factorization("matrix is singular".into()))?;
                let info = FactorInfo { negative_pivots: 0, dense_fallback: true };
                Ok(SymmetricFactor { backend: Backend::Dense(lu), matrix: a.clone(), info })
            }
            Err(k) => Err(Error::Factorization(format!(
                "zero pivot at column {k} and system too large ({}) for dense fallback",
                a.dim()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SparseSym {
        &self.matrix
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.backend {
            Backend::Ldl(l) => l.solve(b),
            Backend::Dense(lu) => lu.solve(b),
        }
    }

    /// Solves `A x = b` with up to two steps of iterative refinement.
    /// Returns the solution and its relative residual `‖Ax − b‖ / ‖b‖`.
    pub fn solve_refined(&self, b: &[f64]) -> (Vec<f64>, f64) {
        let bnorm = norm(b);
        let mut x = self.raw_solve(b);
        if bnorm == 0.0 {
            return (x, 0.0);
        }
        let mut rel = f64::INFINITY;
        for step in 0..3 {
            let ax = self.matrix.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
            rel = norm(&r) / bnorm;
            if rel < 1e-14 || step == 2 {
                break;
            }
            let dx = self.raw_solve(&r);
            x.iter_mut().zip(dx.iter()).for_each(|(xi, di)| *xi += di);
        }
        (x, rel)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.raw_solve(b)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    crate::linalg::sqrt(v.iter().map(|x| x * x).sum())
}
