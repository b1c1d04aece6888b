/// Row-wise sparse matrix. Each row is a list of `(column, value)`; columns
/// inside a row are not required to be sorted or unique (duplicates add).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn with_capacity(ncols: usize, nrows: usize) -> Self {
        Self {
            ncols,
            rows: Vec::with_capacity(nrows),
        }
    }

    pub fn push(&mut self, row: Vec<(usize, f64)>) {
        debug_assert!(row.iter().all(|&(c, _)| c < self.ncols));
        self.rows.push(row);
    }

    /// Appends the rows of `other` below these.
    pub fn extend(&mut self, other: SparseRows) {
        debug_assert_eq!(self.ncols, other.ncols);
        self.rows.extend(other.rows);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `out += A^T y`
    pub fn tmul_add(&self, y: &[f64], out: &mut [f64]) {
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for &(c, v) in row {
                out[c] += v * yi;
            }
        }
    }

    pub fn tmul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.tmul_add(y, &mut out);
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![0.0; self.ncols];
                for &(c, v) in row {
                    d[c] += v;
                }
                d
            })
            .collect()
    }

    /// Column-major view: for every column the `(row, value)` pairs.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.ncols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                cols[c].push((r, v));
            }
        }
        cols
    }
}
