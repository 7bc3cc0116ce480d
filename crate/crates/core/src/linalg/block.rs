//! Block-row compressed storage over dense 3×3 point blocks.

use crate::linalg::dense::DenseMatrix;
use crate::linalg::krylov::LinearOperator;
use crate::{par, Error, Result};

/// Dense 3×3 block, row-major.
pub type Block = [f64; 9];

pub const ZERO_BLOCK: Block = [0.0; 9];
pub const IDENTITY_BLOCK: Block = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

#[inline]
pub fn block_mul(a: &Block, b: &Block) -> Block {
    let mut c = [0.0; 9];
    for i in 0..3 {
        for k in 0..3 {
            let aik = a[3 * i + k];
            for j in 0..3 {
                c[3 * i + j] += aik * b[3 * k + j];
            }
        }
    }
    c
}

/// `c -= a * b`
#[inline]
pub fn block_sub_mul(c: &mut Block, a: &Block, b: &Block) {
    for i in 0..3 {
        for k in 0..3 {
            let aik = a[3 * i + k];
            for j in 0..3 {
                c[3 * i + j] -= aik * b[3 * k + j];
            }
        }
    }
}

/// `y += a * x`
#[inline]
pub fn block_mul_add(y: &mut [f64], a: &Block, x: &[f64]) {
    y[0] += a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
    y[1] += a[3] * x[0] + a[4] * x[1] + a[5] * x[2];
    y[2] += a[6] * x[0] + a[7] * x[1] + a[8] * x[2];
}

/// `y -= a * x`
#[inline]
pub fn block_mul_sub(y: &mut [f64], a: &Block, x: &[f64]) {
    y[0] -= a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
    y[1] -= a[3] * x[0] + a[4] * x[1] + a[5] * x[2];
    y[2] -= a[6] * x[0] + a[7] * x[1] + a[8] * x[2];
}

/// Inverse by Gauss-Jordan elimination with partial pivoting. `None` when a
/// pivot falls below `1e-14` times the largest entry.
pub fn block_inverse(a: &Block) -> Option<Block> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let mut m = *a;
    let mut inv = IDENTITY_BLOCK;
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&r, &s| m[3 * r + col].abs().total_cmp(&m[3 * s + col].abs()))
            .unwrap_or(col);
        if m[3 * pivot + col].abs() <= 1e-14 * scale {
            return None;
        }
        if pivot != col {
            for j in 0..3 {
                m.swap(3 * pivot + j, 3 * col + j);
                inv.swap(3 * pivot + j, 3 * col + j);
            }
        }
        let d = 1.0 / m[3 * col + col];
        for j in 0..3 {
            m[3 * col + j] *= d;
            inv[3 * col + j] *= d;
        }
        for r in 0..3 {
            if r != col {
                let f = m[3 * r + col];
                if f != 0.0 {
                    for j in 0..3 {
                        m[3 * r + j] -= f * m[3 * col + j];
                        inv[3 * r + j] -= f * inv[3 * col + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Square sparse matrix of 3×3 blocks in block-row compressed layout.
///
/// Column indices within a row are strictly increasing and every row holds
/// its diagonal block.
#[derive(Clone, Debug)]
pub struct BlockSparseMatrix {
    block_rows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Block>,
}

impl BlockSparseMatrix {
    pub fn new(block_rows: usize, row_ptr: Vec<usize>, cols: Vec<usize>, blocks: Vec<Block>) -> Result<Self> {
        if row_ptr.len() != block_rows + 1 {
            return Err(Error::DimensionMismatch {
                expected: block_rows + 1,
                found: row_ptr.len(),
            });
        }
        if cols.len() != blocks.len() || row_ptr[block_rows] != cols.len() {
            return Err(Error::DimensionMismatch {
                expected: cols.len(),
                found: blocks.len(),
            });
        }
        for i in 0..block_rows {
            let row = &cols[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "block row {i}: column indices not strictly increasing"
                )));
            }
            if row.last().is_some_and(|&c| c >= block_rows) {
                return Err(Error::InvalidArgument(format!(
                    "block row {i}: column index out of range"
                )));
            }
            if row.binary_search(&i).is_err() {
                return Err(Error::InvalidArgument(format!("block row {i}: missing diagonal block")));
            }
        }
        Ok(BlockSparseMatrix {
            block_rows,
            row_ptr,
            cols,
            blocks,
        })
    }

    /// Matrix with the given pattern and zero values.
    pub fn zeros(block_rows: usize, row_ptr: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        let nnz = cols.len();
        Self::new(block_rows, row_ptr, cols, vec![ZERO_BLOCK; nnz])
    }

    /// Build from dense scalar data; any block with a nonzero entry (and every
    /// diagonal block) is stored.
    pub fn from_dense(dense: &DenseMatrix) -> Result<Self> {
        let n = dense.rows();
        if !n.is_multiple_of(3) || dense.cols() != n {
            return Err(Error::InvalidArgument(
                "dense matrix must be square with dimension divisible by 3".into(),
            ));
        }
        let nb = n / 3;
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut blocks = Vec::new();
        for bi in 0..nb {
            for bj in 0..nb {
                let mut blk = ZERO_BLOCK;
                for r in 0..3 {
                    for c in 0..3 {
                        blk[3 * r + c] = dense.get(3 * bi + r, 3 * bj + c);
                    }
                }
                if bi == bj || blk.iter().any(|&v| v != 0.0) {
                    cols.push(bj);
                    blocks.push(blk);
                }
            }
            row_ptr.push(cols.len());
        }
        Self::new(nb, row_ptr, cols, blocks)
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    /// Scalar dimension.
    pub fn dim(&self) -> usize {
        3 * self.block_rows
    }

    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn row(&self, i: usize) -> (&[usize], &[Block]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.blocks[r])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[usize], &mut [Block]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &mut self.blocks[r])
    }

    /// Storage position of block `(i, j)`.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.cols[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|p| start + p)
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Block> {
        self.find(i, j).map(|p| &self.blocks[p])
    }

    /// Scalar entry.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.block(r / 3, c / 3).map_or(0.0, |b| b[3 * (r % 3) + c % 3])
    }

    pub fn into_parts(self) -> (usize, Vec<usize>, Vec<usize>, Vec<Block>) {
        (self.block_rows, self.row_ptr, self.cols, self.blocks)
    }

    /// `y = A x`, parallel over block rows.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "matvec: x has wrong length");
        assert_eq!(y.len(), self.dim(), "matvec: y has wrong length");
        const ROWS_PER_TASK: usize = 512;
        par::for_each_chunk_mut(y, 3 * ROWS_PER_TASK, |start, out| {
            let first = start / 3;
            for (local, yi) in out.chunks_exact_mut(3).enumerate() {
                let i = first + local;
                yi.fill(0.0);
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    let c = 3 * self.cols[p];
                    block_mul_add(yi, &self.blocks[p], &x[c..c + 3]);
                }
            }
        });
    }

    /// Principal submatrix on the sorted block index set `index`; couplings to
    /// blocks outside the set are dropped.
    pub fn principal_submatrix(&self, index: &[usize]) -> Result<Self> {
        if index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "submatrix index set must be strictly increasing".into(),
            ));
        }
        let mut row_ptr = Vec::with_capacity(index.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut blocks = Vec::new();
        for &g in index {
            let (rc, rb) = self.row(g);
            // Columns ascend, so each search can start where the last one ended.
            let mut lo = 0;
            for (&c, b) in rc.iter().zip(rb) {
                match index[lo..].binary_search(&c) {
                    Ok(p) => {
                        cols.push(lo + p);
                        blocks.push(*b);
                        lo += p + 1;
                    }
                    Err(p) => lo += p,
                }
            }
            row_ptr.push(cols.len());
        }
        Self::new(index.len(), row_ptr, cols, blocks)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim();
        let mut d = DenseMatrix::zeros(n, n);
        for i in 0..self.block_rows {
            let (rc, rb) = self.row(i);
            for (&j, b) in rc.iter().zip(rb) {
                for r in 0..3 {
                    for c in 0..3 {
                        d.set(3 * i + r, 3 * j + c, b[3 * r + c]);
                    }
                }
            }
        }
        d
    }
}

impl LinearOperator for BlockSparseMatrix {
    fn dim(&self) -> usize {
        BlockSparseMatrix::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}
