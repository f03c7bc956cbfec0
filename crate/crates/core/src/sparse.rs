//! Compressed sparse row matrices.

use std::io::Write;

use crate::error::{Error, Result};
use crate::par;

/// CSR matrix with sorted, unique column indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Rows per task in parallel row loops.
const ROW_CHUNK: usize = 1024;

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are
    /// summed in the order they appear.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        Self::from_rows(n_cols, rows)
    }

    /// Builds a matrix from unsorted row lists; duplicates within a row are
    /// summed in the order they appear.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let rows = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        Self::from_rows(n_cols, rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y = A x`, overwriting `y`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "matvec: input length");
        assert_eq!(y.len(), self.n_rows, "matvec: output length");
        par::for_each_chunk_mut(y, ROW_CHUNK, |k, out| {
            let base = k * ROW_CHUNK;
            for (off, yi) in out.iter_mut().enumerate() {
                let (cols, vals) = self.row(base + off);
                *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
            }
        });
    }

    /// Dot product of row `r` with `x`.
    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_cols];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows(self.n_rows, rows)
    }

    /// Largest entry of `|A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        if self.n_rows != self.n_cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Sum of `coeff * matrix` over `terms`; all matrices must share a shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let Some((_, first)) = terms.first() else {
            return Err(Error::InvalidArgument("empty linear combination".into()));
        };
        let (n_rows, n_cols) = (first.n_rows, first.n_cols);
        if terms.iter().any(|(_, m)| m.n_rows != n_rows || m.n_cols != n_cols) {
            return Err(Error::DimensionMismatch("linear combination of differently sized matrices".into()));
        }
        let rows = (0..n_rows)
            .map(|r| {
                let mut row = Vec::new();
                for (alpha, m) in terms {
                    let (cols, vals) = m.row(r);
                    row.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, alpha * v)));
                }
                row
            })
            .collect();
        Ok(Self::from_rows(n_cols, rows))
    }

    /// Kronecker product `self ⊗ other`: entry `(a·p + b, c·q + d)` is
    /// `self[a, c] · other[b, d]` where `other` is `p × q`.
    pub fn kron(&self, other: &SparseMatrix) -> SparseMatrix {
        kron_sum(&[(self, other)], self.n_rows * other.n_rows, self.n_cols * other.n_cols)
    }

    /// Keeps the rows in `rows` and the columns in `cols`, renumbered by
    /// their position in those lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let out_rows = rows
            .iter()
            .map(|&r| {
                let (cs, vs) = self.row(r);
                cs.iter()
                    .zip(vs)
                    .filter(|(c, _)| col_map[**c] != usize::MAX)
                    .map(|(c, v)| (col_map[*c], *v))
                    .collect()
            })
            .collect();
        Self::from_rows(cols.len(), out_rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }

    /// Writes one `row col value` triple per line (zero-based indices).
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "% {} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(out, "{r} {c} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Explicit `Σ P_k ⊗ S_k` for pairs of (outer, inner) factors, assembled
/// row by row. The result is `n_rows × n_cols`.
pub fn kron_sum(terms: &[(&SparseMatrix, &SparseMatrix)], n_rows: usize, n_cols: usize) -> SparseMatrix {
    let Some(&(p0, s0)) = terms.first() else {
        return SparseMatrix::zeros(n_rows, n_cols);
    };
    let (ip, iq) = (s0.n_rows, s0.n_cols);
    assert!(terms.iter().all(|(p, s)| s.n_rows == ip
        && s.n_cols == iq
        && p.n_rows == p0.n_rows
        && p.n_cols == p0.n_cols));
    assert_eq!(n_rows, p0.n_rows * ip);
    assert_eq!(n_cols, p0.n_cols * iq);
    let rows = par::map_range(n_rows, |row| {
        let (t, r) = (row / ip, row % ip);
        let mut entries = Vec::new();
        for (p, s) in terms {
            let (pc, pv) = p.row(t);
            let (sc, sv) = s.row(r);
            for (&j, &a) in pc.iter().zip(pv) {
                for (&i, &b) in sc.iter().zip(sv) {
                    entries.push((j * iq + i, a * b));
                }
            }
        }
        entries
    });
    SparseMatrix::from_rows(n_cols, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]), vec![6.5, -2.0]);
    }

    #[test]
    fn kron_matches_dense_definition() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let b = SparseMatrix::from_dense(&[vec![4.0, 0.0, 1.0], vec![0.0, 5.0, 0.0]]);
        let k = a.kron(&b);
        assert_eq!((k.n_rows(), k.n_cols()), (4, 6));
        let da = a.to_dense();
        let db = b.to_dense();
        let dk = k.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..3 {
                        assert_eq!(dk[i * 2 + p][j * 3 + q], da[i][j] * db[p][q]);
                    }
                }
            }
        }
    }

    #[test]
    fn submatrix_and_transpose() {
        let m = SparseMatrix::from_dense(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 3.0, 4.0],
            vec![5.0, 0.0, 6.0],
        ]);
        let s = m.submatrix(&[0, 2], &[0, 2]);
        assert_eq!(s.to_dense(), vec![vec![1.0, 0.0], vec![5.0, 6.0]]);
        assert_eq!(m.transpose().get(0, 2), 5.0);
        assert!(m.asymmetry() > 0.0);
        let sym = SparseMatrix::linear_combination(&[(1.0, &m), (1.0, &m.transpose())]).unwrap();
        assert_eq!(sym.asymmetry(), 0.0);
    }
}
