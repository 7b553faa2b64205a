//! Compressed-row complex sparse matrices and the dense kernels used by the
//! Lindblad right-hand side.
//!
//! Dense operands are row-major `dim × dim` slices. All kernels accumulate
//! into their output buffer.

use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    active_rows: Vec<usize>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        entries.sort_by_key(|a| (a.0, a.1));

        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != C64::new(0.0, 0.0));

        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let cols = merged.iter().map(|e| e.1).collect();
        let vals = merged.iter().map(|e| e.2).collect();
        let active_rows = (0..dim).filter(|&r| row_ptr[r + 1] > row_ptr[r]).collect();
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            active_rows,
        }
    }

    /// Matrix with at most one nonzero per column: `f(col)` gives the row
    /// and amplitude, or `None` for an empty column.
    pub fn from_column_map<F>(dim: usize, f: F) -> Self
    where
        F: Fn(usize) -> Option<(usize, C64)>,
    {
        Self::from_triplets(dim, (0..dim).filter_map(|c| f(c).map(|(r, v)| (r, c, v))))
    }

    pub fn diagonal<F>(dim: usize, f: F) -> Self
    where
        F: Fn(usize) -> f64,
    {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, C64::new(f(i), 0.0))))
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(dim, |_| 1.0)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_triplets(dim, std::iter::empty())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    /// Rows holding at least one stored entry.
    pub fn active_rows(&self) -> &[usize] {
        &self.active_rows
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.active_rows
            .iter()
            .flat_map(move |&r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r).find(|&(cc, _)| cc == c).map(|(_, v)| v).unwrap_or_default()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (r, c, s * v)))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_triplets(self.dim, self.triplets().chain(other.triplets()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = Vec::new();
        for (r, k, a) in self.triplets() {
            for (c, b) in other.row(k) {
                out.push((r, c, a * b));
            }
        }
        Self::from_triplets(self.dim, out)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut d = vec![C64::default(); self.dim * self.dim];
        for (r, c, v) in self.triplets() {
            d[r * self.dim + c] += v;
        }
        d
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.add(&other.scale(C64::new(-1.0, 0.0)))
            .vals
            .iter()
            .fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(r, c, _)| r == c)
    }

    pub fn max_nnz_per_column(&self) -> usize {
        let mut counts = vec![0usize; self.dim];
        for &c in &self.cols {
            counts[c] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// `tr(A·X)` for a dense row-major `X`.
    pub fn trace_with(&self, x: &[C64]) -> C64 {
        let d = self.dim;
        self.triplets().map(|(r, c, v)| v * x[c * d + r]).sum()
    }

    /// `out += coef · A · X`
    /// Position of `(r, c)` in the stored values, if present.
    pub fn entry_index(&self, r: usize, c: usize) -> Option<usize> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].binary_search(&c).ok().map(|i| span.start + i)
    }

    pub fn values(&self) -> &[C64] {
        &self.vals
    }

    /// Stored values; the sparsity pattern stays fixed.
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.vals
    }

    pub fn acc_left(&self, coef: C64, x: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &r in &self.active_rows {
            let out_row = &mut out[r * d..(r + 1) * d];
            for (c, v) in self.row(r) {
                let s = coef * v;
                let x_row = &x[c * d..(c + 1) * d];
                for (o, xv) in out_row.iter_mut().zip(x_row) {
                    *o += s * xv;
                }
            }
        }
    }

    /// `out += coef · X · A†`
    pub fn acc_right_adjoint(&self, coef: C64, x: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &b in &self.active_rows {
            for (c, v) in self.row(b) {
                let s = coef * v.conj();
                for a in 0..d {
                    out[a * d + b] += s * x[a * d + c];
                }
            }
        }
    }

    /// `out += rate · A · X · A†`. `scratch` must hold at least `dim` entries.
    pub fn acc_sandwich(&self, rate: f64, x: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        let d = self.dim;
        let t = &mut scratch[..d];
        for &r1 in &self.active_rows {
            t.iter_mut().for_each(|e| *e = C64::default());
            for (c, v) in self.row(r1) {
                for (tv, xv) in t.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *tv += v * xv;
                }
            }
            for &r2 in &self.active_rows {
                let acc: C64 = self.row(r2).map(|(c, w)| t[c] * w.conj()).sum();
                out[r1 * d + r2] += rate * acc;
            }
        }
    }
}
