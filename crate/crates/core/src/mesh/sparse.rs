use serde::{Deserialize, Serialize};

use super::{MeshError, Result};

/// Compressed sparse row matrix used for the pooling and unpooling maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk form: shape plus `(row, col, value)` triplets in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SparseTriplets {
    pub rows: usize,
    pub cols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Duplicate coordinates are summed; entries are sorted by (row, col).
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if triplets.iter().any(|&(r, c, _)| r >= rows || c >= cols) {
            return Err(MeshError::InvalidArgument(format!(
                "triplet outside {rows}x{cols} matrix"
            )));
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
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

    /// `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols, self.rows, t).expect("transposed indices are in range")
    }

    /// Dense product with a column vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Applies the map to `features`, a row-major `cols × channels` block,
    /// writing the `rows × channels` result into `out`.
    pub fn apply_features(&self, features: &[f64], channels: usize, out: &mut [f64]) {
        debug_assert_eq!(features.len(), self.cols * channels);
        debug_assert_eq!(out.len(), self.rows * channels);
        for r in 0..self.rows {
            let dst = &mut out[r * channels..(r + 1) * channels];
            dst.fill(0.0);
            for (c, v) in self.row(r) {
                let src = &features[c * channels..(c + 1) * channels];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    /// Accumulates the transposed product: `grad_in += selfᵀ · grad_out`.
    pub fn apply_transpose_features(&self, grad_out: &[f64], channels: usize, grad_in: &mut [f64]) {
        debug_assert_eq!(grad_out.len(), self.rows * channels);
        debug_assert_eq!(grad_in.len(), self.cols * channels);
        for r in 0..self.rows {
            let src = &grad_out[r * channels..(r + 1) * channels];
            for (c, v) in self.row(r) {
                let dst = &mut grad_in[c * channels..(c + 1) * channels];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    pub(crate) fn to_triplets(&self) -> SparseTriplets {
        SparseTriplets {
            rows: self.rows,
            cols: self.cols,
            triplets: self.triplets(),
        }
    }

    pub(crate) fn from_serialized(t: SparseTriplets) -> Result<Self> {
        Self::from_triplets(t.rows, t.cols, t.triplets)
    }
}
