//! Small sparse/dense helpers shared by the solvers and oracles.

use nalgebra::DMatrix;

/// Compressed sparse row matrix; duplicate triplets are summed and explicit
/// zeros dropped at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub struct RowView<'a> {
    cols: &'a [usize],
    vals: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn col_indices(&self) -> &'a [usize] {
        self.cols
    }
    pub fn values(&self) -> &'a [f64] {
        self.vals
    }
}

impl CsrMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; nrows + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut rows = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            if rows.last() == Some(&i) && cols.last() == Some(&j) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(i);
                cols.push(j);
                vals.push(v);
            }
        }
        let mut keep_cols = Vec::with_capacity(cols.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((i, j), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != 0.0 {
                row_ptr[i + 1] += 1;
                keep_cols.push(j);
                keep_vals.push(v);
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows, ncols, row_ptr, cols: keep_cols, vals: keep_vals }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        RowView { cols: &self.cols[r.clone()], vals: &self.vals[r] }
    }

    pub fn triplet_iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let row = self.row(i);
            row.cols.iter().zip(row.vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplet_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.nrows.min(self.ncols)];
        for (i, j, v) in self.triplet_iter() {
            if i == j {
                diag[i] = v;
            }
        }
        diag
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplet_iter() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                let row = self.row(i);
                row.cols.iter().zip(row.vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_summed_and_zeros_dropped() {
        let m = CsrMatrix::from_triplets(3, 3, &[(2, 0, 1.0), (0, 1, 2.0), (2, 0, 0.5), (1, 1, 0.0), (0, 0, -1.0)]);
        let t: Vec<_> = m.triplet_iter().collect();
        assert_eq!(t, vec![(0, 0, -1.0), (0, 1, 2.0), (2, 0, 1.5)]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, 0.0, 1.5]);
        assert_eq!(m.transpose().triplet_iter().collect::<Vec<_>>(), vec![(0, 0, -1.0), (0, 2, 1.5), (1, 0, 2.0)]);
        assert_eq!(m.diagonal(), vec![-1.0, 0.0, 0.0]);
    }
}
