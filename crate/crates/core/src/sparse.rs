//! Compressed sparse row matrix used for the feature blocks.

/// Row-major CSR matrix of `f64`. Column indices within a row are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-row `(col, value)` lists. Entries are sorted by column;
    /// duplicate columns are summed and explicit zeros kept out.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let n = rows.len();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < cols, "column {c} out of bounds for width {cols}");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        let mut m = Self {
            rows: n,
            cols,
            indptr,
            indices,
            values,
        };
        m.prune_zeros();
        m
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut indptr = vec![0];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_norm(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// New matrix with the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_rows(self.cols, rows.iter().map(|&r| self.row(r).collect()).collect())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    /// `self * b` where `b` is dense row-major `cols x n`.
    pub fn matmul_dense(&self, b: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.cols * n);
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let dst = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let src = &b[c * n..(c + 1) * n];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// `self^T * g` where `g` is dense row-major `rows x n`.
    pub fn transpose_matmul_dense(&self, g: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows * n);
        let mut out = vec![0.0; self.cols * n];
        for r in 0..self.rows {
            let src = &g[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let dst = &mut out[c * n..(c + 1) * n];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hstack(blocks: &[&CsrMatrix]) -> Self {
        let rows = blocks.first().map_or(0, |b| b.rows);
        assert!(blocks.iter().all(|b| b.rows == rows), "row count mismatch");
        let cols = blocks.iter().map(|b| b.cols).sum();
        let rows_data = (0..rows)
            .map(|r| {
                let mut offset = 0;
                let mut row = Vec::new();
                for b in blocks {
                    row.extend(b.row(r).map(|(c, v)| (c + offset, v)));
                    offset += b.cols;
                }
                row
            })
            .collect();
        Self::from_rows(cols, rows_data)
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self::from_rows(
            cols,
            (0..rows)
                .map(|r| {
                    (0..cols)
                        .filter_map(|c| {
                            let v = data[r * cols + c];
                            (v != 0.0).then_some((c, v))
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_merges_duplicates_and_drops_zeros() {
        let m = CsrMatrix::from_rows(3, vec![vec![(2, 1.0), (0, 2.0), (2, 3.0)], vec![(1, 0.0)]]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), 4.0);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.row_nnz(1), 0);
    }

    #[test]
    fn products_match_dense() {
        let m = CsrMatrix::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![(1, -1.0)]]);
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(m.matmul_dense(&b, 2), vec![11.0, 14.0, -3.0, -4.0]);
        let g = [1.0, 1.0, 2.0, 0.0];
        assert_eq!(m.transpose_matmul_dense(&g, 2), vec![1.0, 1.0, -2.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn hstack_offsets_columns() {
        let a = CsrMatrix::from_rows(2, vec![vec![(1, 1.0)]]);
        let b = CsrMatrix::from_rows(1, vec![vec![(0, 5.0)]]);
        let h = CsrMatrix::hstack(&[&a, &b]);
        assert_eq!(h.cols(), 3);
        assert_eq!(h.to_dense(), vec![0.0, 1.0, 5.0]);
    }
}
