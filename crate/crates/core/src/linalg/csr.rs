//! Scalar compressed-sparse-row matrices for the spatial operators.

use crate::linalg::dense::DenseMatrix;
use crate::linalg::krylov::{LinearOperator, Preconditioner};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix with a fixed pattern and zero values. Columns in each row
    /// must be strictly increasing.
    pub fn zeros(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[n] != cols.len() {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                found: row_ptr.len(),
            });
        }
        for i in 0..n {
            let row = &cols[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&c| c >= n) {
                return Err(Error::InvalidArgument(format!("row {i}: malformed column indices")));
            }
        }
        let nnz = cols.len();
        Ok(CsrMatrix {
            n,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.cols[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|p| start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |p| self.vals[p])
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// `Σ coeff_k · M_k` over matrices sharing this pattern.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?
            .1;
        let mut out = first.clone();
        out.vals.fill(0.0);
        for &(c, m) in terms {
            if !m.same_pattern(first) {
                return Err(Error::InvalidArgument("patterns differ".into()));
            }
            for (o, v) in out.vals.iter_mut().zip(&m.vals) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Transpose; requires a structurally symmetric pattern.
    pub fn transpose_same_pattern(&self) -> Result<Self> {
        let mut t = self.clone();
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[p];
                let q = self
                    .find(j, i)
                    .ok_or_else(|| Error::InvalidArgument("pattern is not symmetric".into()))?;
                t.vals[q] = self.vals[p];
            }
        }
        Ok(t)
    }

    /// Replace row `i` by the identity row.
    pub fn set_identity_row(&mut self, i: usize) {
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            self.vals[p] = if self.cols[p] == i { 1.0 } else { 0.0 };
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        par::for_each_chunk_mut(y, 2048, |start, out| {
            for (k, yi) in out.iter_mut().enumerate() {
                let i = start + k;
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[p] * x[self.cols[p]];
                }
                *yi = s;
            }
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `xᵀ M y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let my = self.mul(y);
        x.iter().zip(&my).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d.set(i, self.cols[p], self.vals[p]);
            }
        }
        d
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

/// Scalar ILU(0) on the pattern of a [`CsrMatrix`].
#[derive(Clone, Debug)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let mut lu = a.clone();
        let diag: Vec<usize> = (0..n)
            .map(|i| lu.find(i, i).ok_or(Error::SingularMatrix { column: i }))
            .collect::<Result<_>>()?;
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in start..end {
                pos[lu.cols[p]] = p;
            }
            for p in start..diag[i] {
                let k = lu.cols[p];
                let pivot = lu.vals[diag[k]];
                let l = lu.vals[p] / pivot;
                lu.vals[p] = l;
                for q in diag[k] + 1..lu.row_ptr[k + 1] {
                    let target = pos[lu.cols[q]];
                    if target != usize::MAX {
                        lu.vals[target] -= l * lu.vals[q];
                    }
                }
            }
            if lu.vals[diag[i]].abs() < 1e-300 {
                return Err(Error::SingularMatrix { column: i });
            }
            for p in start..end {
                pos[lu.cols[p]] = usize::MAX;
            }
        }
        Ok(Ilu0 { lu, diag })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let lu = &self.lu;
        x.copy_from_slice(b);
        for i in 0..lu.n {
            let mut s = x[i];
            for p in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[p] * x[lu.cols[p]];
            }
            x[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = x[i];
            for p in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[p] * x[lu.cols[p]];
            }
            x[i] = s / lu.vals[self.diag[i]];
        }
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve(r, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> CsrMatrix {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(1)..(i + 2).min(n) {
                cols.push(j);
            }
            row_ptr.push(cols.len());
        }
        let mut m = CsrMatrix::zeros(n, row_ptr, cols).unwrap();
        for i in 0..n {
            for j in i.saturating_sub(1)..(i + 2).min(n) {
                let p = m.find(i, j).unwrap();
                m.values_mut()[p] = if i == j { 4.0 } else { -1.0 - 0.1 * j as f64 };
            }
        }
        m
    }

    #[test]
    fn ilu0_exact_on_tridiagonal() {
        let a = tridiagonal(9);
        let ilu = Ilu0::factor(&a).unwrap();
        let x: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let b = a.mul(&x);
        let mut y = vec![0.0; 9];
        ilu.solve(&b, &mut y);
        for (u, v) in y.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn transpose_and_combination() {
        let a = tridiagonal(5);
        let t = a.transpose_same_pattern().unwrap();
        assert_eq!(t.to_dense(), a.to_dense().transpose());
        let c = CsrMatrix::linear_combination(&[(2.0, &a), (-1.0, &t)]).unwrap();
        assert_eq!(c.get(1, 2), 2.0 * a.get(1, 2) - a.get(2, 1));
    }
}
