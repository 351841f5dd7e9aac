//! Sparse LDL^T factorization of symmetric quasi-definite matrices.
//!
//! Up-looking factorization over a fixed sparsity pattern: the symbolic
//! analysis (elimination tree and column counts) is done once and reused
//! across refactorizations with new numeric values, which is what the
//! interior-point loop needs. The input is the upper triangle in
//! compressed-column form; row indices within a column may be unsorted but
//! must not exceed the column index.

const NONE: usize = usize::MAX;

/// Upper-triangular part of a symmetric matrix in compressed-column form.
#[derive(Debug, Clone)]
pub struct UpperCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
}

impl UpperCsc {
    pub fn nnz(&self) -> usize {
        self.col_ptr[self.n]
    }
}

/// Reusable LDL^T factorization workspace.
pub struct LdlFactor {
    n: usize,
    parent: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    /// pivots pushed to the floor during the last refactorization
    pub floored_pivots: usize,
    // per-refactor scratch
    y: Vec<f64>,
    pattern: Vec<usize>,
    flag: Vec<usize>,
    l_fill: Vec<usize>,
}

impl LdlFactor {
    /// Symbolic analysis of the pattern: elimination tree and column counts.
    pub fn analyze(a: &UpperCsc) -> Self {
        Self::analyze_capped(a, usize::MAX).expect("uncapped analysis cannot fail")
    }

    /// Like [`LdlFactor::analyze`], but gives up when the factor would
    /// exceed `max_nnz` entries instead of allocating it.
    pub fn analyze_capped(a: &UpperCsc, max_nnz: usize) -> Option<Self> {
        let n = a.n;
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = a.row_idx[p];
                debug_assert!(i <= k, "pattern must be upper triangular");
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        let nnz = l_ptr[n];
        if nnz > max_nnz {
            return None;
        }
        Some(LdlFactor {
            n,
            parent,
            l_ptr,
            l_idx: vec![0; nnz],
            l_val: vec![0.0; nnz],
            d: vec![0.0; n],
            floored_pivots: 0,
            y: vec![0.0; n],
            pattern: vec![0; n],
            flag,
            l_fill: vec![0; n],
        })
    }

    /// Numeric factorization over the analyzed pattern.
    ///
    /// `signs[k]` gives the expected sign of pivot `k` (+1 or -1, a
    /// quasi-definite matrix has a fixed sign per row). Pivots that come out
    /// on the wrong side or too small are pushed to the expected sign at a
    /// magnitude relative to their column scale, which keeps `1/D` and the
    /// `L` entries proportionate on rank-deficient columns; callers are
    /// expected to clean up the induced error with iterative refinement.
    pub fn refactor(&mut self, a: &UpperCsc, values: &[f64], signs: &[i8], min_pivot: f64) {
        let n = self.n;
        self.floored_pivots = 0;
        for v in self.flag.iter_mut() {
            *v = NONE;
        }
        for v in self.y.iter_mut() {
            *v = 0.0;
        }
        for k in 0..n {
            let mut top = n;
            self.flag[k] = k;
            self.l_fill[k] = 0;
            let mut col_scale = 0.0f64;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = a.row_idx[p];
                self.y[i] += values[p];
                col_scale = col_scale.max(values[p].abs());
                let mut len = 0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    self.pattern[top] = self.pattern[len];
                }
            }
            let mut dk = self.y[k];
            self.y[k] = 0.0;
            for t in top..n {
                let i = self.pattern[t];
                let yi = self.y[i];
                self.y[i] = 0.0;
                let p2 = self.l_ptr[i] + self.l_fill[i];
                for p in self.l_ptr[i]..p2 {
                    self.y[self.l_idx[p]] -= self.l_val[p] * yi;
                }
                let di = self.d[i];
                let lki = yi / di;
                dk -= lki * yi;
                self.l_idx[p2] = k;
                self.l_val[p2] = lki;
                self.l_fill[i] += 1;
            }
            let sign = f64::from(signs[k]);
            let floor = min_pivot.max(1e-14 * col_scale);
            if !(dk * sign >= floor) {
                dk = sign * floor;
                self.floored_pivots += 1;
            }
            self.d[k] = dk;
        }
    }

    /// In-place solve of `L D L^T x = b`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                    x[self.l_idx[p]] -= self.l_val[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                xj -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = xj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Dense reference multiply of the symmetric matrix given by its upper triangle.
    fn sym_mul(a: &UpperCsc, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.n];
        for j in 0..a.n {
            for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                let i = a.row_idx[p];
                out[i] += values[p] * x[j];
                if i != j {
                    out[j] += values[p] * x[i];
                }
            }
        }
        out
    }

    #[test]
    fn factor_solves_quasidefinite_system() {
        // [ 4  1  0  2 ]
        // [ 1  3  0  0 ]
        // [ 0  0 -2  1 ]
        // [ 2  0  1 -5 ]
        let a = UpperCsc {
            n: 4,
            col_ptr: vec![0, 1, 3, 4, 7],
            row_idx: vec![0, 0, 1, 2, 0, 2, 3],
        };
        let values = vec![4.0, 1.0, 3.0, -2.0, 2.0, 1.0, -5.0];
        let signs = [1, 1, -1, -1];
        let mut f = LdlFactor::analyze(&a);
        f.refactor(&a, &values, &signs, 1e-14);
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let r = sym_mul(&a, &values, &x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10, "residual too large: {r:?}");
        }
    }

    #[test]
    fn refactor_reuses_pattern() {
        let a = UpperCsc {
            n: 3,
            col_ptr: vec![0, 1, 3, 5],
            row_idx: vec![0, 0, 1, 1, 2],
        };
        let signs = [1, 1, 1];
        let mut f = LdlFactor::analyze(&a);
        for scale in [1.0, 2.0, 7.5] {
            let values = vec![2.0 * scale, 0.5, 3.0 * scale, 1.0, 4.0 * scale];
            f.refactor(&a, &values, &signs, 1e-14);
            let b = vec![1.0, 2.0, 3.0];
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            let r = sym_mul(&a, &values, &x);
            for (ri, bi) in r.iter().zip(&b) {
                assert!((ri - bi).abs() < 1e-10);
            }
        }
    }
}
