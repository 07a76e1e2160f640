use crate::error::{Error, Result};

use super::Matrix;

/// Constant sparse matrix in compressed-row form.
///
/// Used as the fixed left operand of message-passing products `S · X`; it
/// never receives gradients itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed in
    /// input order; explicit zeros are kept.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::contract(format!(
                    "sparse entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let mut col_idx = vec![0; triplets.len()];
        let mut values = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = fill[r];
            col_idx[slot] = c;
            values[slot] = v;
            fill[r] += 1;
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
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

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (r, self.col_idx[i], self.values[i]))
        })
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            let cur = m.get(r, c);
            m.set(r, c, cur + v);
        }
        m
    }

    /// `out = self · x` for a row-major `x` with `width` columns.
    pub(crate) fn apply(&self, x: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(out.len(), self.rows * width);
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[i];
                let src = &x[self.col_idx[i] * width..(self.col_idx[i] + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    /// `out += selfᵀ · g`.
    pub(crate) fn apply_transpose_acc(&self, g: &[f64], width: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let src = &g[r * width..(r + 1) * width];
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[i];
                let c = self.col_idx[i];
                let dst = &mut out[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    pub fn matmul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.cols {
            return Err(Error::Shape {
                op: "sparse matmul",
                left: (self.rows, self.cols),
                right: x.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        self.apply(x.data(), x.cols(), out.data_mut());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_matches_dense_product() {
        let s = SparseMatrix::from_triplets(3, 3, &[(1, 0, 0.5), (2, 1, 2.0), (0, 0, 1.0), (2, 1, 1.0)])
            .unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let expected = s.to_dense().matmul(&x).unwrap();
        assert_eq!(s.matmul_dense(&x).unwrap(), expected);
        assert_eq!(s.to_dense().get(2, 1), 3.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }
}
