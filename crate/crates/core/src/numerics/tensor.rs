use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    expected: (rows.len(), cols),
                    found: (rows.len(), r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                op: "matmul_tn",
                expected: (self.rows, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Tensor2D::zeros(self.cols, other.cols);
        let n = other.cols;
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                op: "matmul_nt",
                expected: (other.rows, self.cols),
                found: other.shape(),
            });
        }
        let mut out = Tensor2D::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    /// Add `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Dimension {
                op: "add_row_vector",
                expected: (1, self.cols),
                found: (1, bias.len()),
            });
        }
        for i in 0..self.rows {
            for (v, b) in self.row_mut(i).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Column sums, i.e. `1ᵀ · self`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Keep only the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor2D {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor2D {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// First `n` rows.
    pub fn head_rows(&self, n: usize) -> Tensor2D {
        let n = n.min(self.rows);
        Tensor2D {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor2D {
        Tensor2D::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_variants_agree() {
        let a = t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.transpose().matmul_tn(&b).unwrap(), ab);
        assert_eq!(a.matmul_nt(&b.transpose()).unwrap(), ab);
    }

    #[test]
    fn shape_errors_are_reported() {
        let a = Tensor2D::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension { .. })));
        assert!(Tensor2D::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor2D::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn column_sums_and_bias() {
        let mut a = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.column_sums(), vec![4.0, 6.0]);
        a.add_row_vector(&[1.0, -1.0]).unwrap();
        assert_eq!(a.data(), &[2.0, 1.0, 4.0, 3.0]);
    }
}
