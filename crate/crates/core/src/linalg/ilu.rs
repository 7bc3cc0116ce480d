//! Point-block incomplete LU factorization with level-of-fill control.
//!
//! The symbolic phase computes the ILU(k) pattern on the block graph; the
//! numeric phase runs the IKJ elimination over 3×3 blocks without pivoting
//! across blocks. Diagonal pivots are inverted with partial pivoting inside
//! the block and stored inverted.

use std::collections::BTreeSet;

use crate::linalg::block::{
    block_inverse, block_mul, block_mul_sub, block_sub_mul, Block, BlockSparseMatrix, ZERO_BLOCK,
};
use crate::linalg::krylov::Preconditioner;
use crate::{Error, Result};

/// ILU(k) pattern of `a`: `(row_ptr, cols)`.
pub fn symbolic_pattern(a: &BlockSparseMatrix, level: usize) -> (Vec<usize>, Vec<usize>) {
    if level == 0 {
        return (a.row_ptr().to_vec(), a.cols().to_vec());
    }
    let n = a.block_rows();
    let max_level = u32::try_from(level).unwrap_or(u32::MAX - 1);
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols: Vec<usize> = Vec::with_capacity(a.nnz_blocks() * 2);
    let mut levels: Vec<u32> = Vec::with_capacity(a.nnz_blocks() * 2);
    let mut diag: Vec<usize> = Vec::with_capacity(n);

    let mut lev_of = vec![u32::MAX; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut pending = BTreeSet::new();
    for i in 0..n {
        let (rc, _) = a.row(i);
        for &c in rc {
            lev_of[c] = 0;
            touched.push(c);
            if c < i {
                pending.insert(c);
            }
        }
        while let Some(k) = pending.pop_first() {
            let lik = lev_of[k];
            for p in diag[k] + 1..row_ptr[k + 1] {
                let j = cols[p];
                let new = lik.saturating_add(levels[p]).saturating_add(1);
                if new > max_level {
                    continue;
                }
                if lev_of[j] == u32::MAX {
                    lev_of[j] = new;
                    touched.push(j);
                    if j < i {
                        pending.insert(j);
                    }
                } else if new < lev_of[j] {
                    lev_of[j] = new;
                }
            }
        }
        touched.sort_unstable();
        for &c in &touched {
            if c == i {
                diag.push(cols.len());
            }
            cols.push(c);
            levels.push(lev_of[c]);
            lev_of[c] = u32::MAX;
        }
        touched.clear();
        row_ptr.push(cols.len());
    }
    (row_ptr, cols)
}

/// Block ILU(k) factors stored in one block-CSR array: strictly lower blocks
/// hold `L` (unit diagonal implied), the rest hold `U`, and the inverted
/// diagonal blocks of `U` are kept separately.
#[derive(Clone, Debug)]
pub struct BlockIlu {
    level: usize,
    block_rows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Block>,
    diag: Vec<usize>,
    diag_inv: Vec<Block>,
}

impl BlockIlu {
    pub fn factor(a: &BlockSparseMatrix, level: usize) -> Result<Self> {
        if level == 0 {
            return Self::factor_in_place(a.clone());
        }
        let (row_ptr, cols) = symbolic_pattern(a, level);
        let mut vals = vec![ZERO_BLOCK; cols.len()];
        for i in 0..a.block_rows() {
            let (rc, rb) = a.row(i);
            let row = &cols[row_ptr[i]..row_ptr[i + 1]];
            let mut lo = 0;
            for (&c, b) in rc.iter().zip(rb) {
                // `row` is a superset of `rc`, both sorted
                let p = lo + row[lo..].partition_point(|&x| x < c);
                vals[row_ptr[i] + p] = *b;
                lo = p + 1;
            }
        }
        Self::numeric(a.block_rows(), row_ptr, cols, vals, level)
    }

    /// ILU(0), reusing the storage of `a` for the factors.
    pub fn factor_in_place(a: BlockSparseMatrix) -> Result<Self> {
        let (n, row_ptr, cols, vals) = a.into_parts();
        Self::numeric(n, row_ptr, cols, vals, 0)
    }

    fn numeric(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>, mut vals: Vec<Block>, level: usize) -> Result<Self> {
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let start = row_ptr[i];
            let p = cols[start..row_ptr[i + 1]]
                .binary_search(&i)
                .map_err(|_| Error::SingularBlock { row: i })?;
            diag.push(start + p);
        }
        let mut diag_inv = vec![ZERO_BLOCK; n];
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            for p in start..end {
                pos[cols[p]] = p - start;
            }
            let (done, current) = vals.split_at_mut(start);
            let current = &mut current[..end - start];
            for p in start..diag[i] {
                let k = cols[p];
                let l = block_mul(&current[p - start], &diag_inv[k]);
                current[p - start] = l;
                for q in diag[k] + 1..row_ptr[k + 1] {
                    let slot = pos[cols[q]];
                    if slot != usize::MAX {
                        block_sub_mul(&mut current[slot], &l, &done[q]);
                    }
                }
            }
            diag_inv[i] = block_inverse(&current[diag[i] - start]).ok_or(Error::SingularBlock { row: i })?;
            for p in start..end {
                pos[cols[p]] = usize::MAX;
            }
        }
        Ok(BlockIlu {
            level,
            block_rows: n,
            row_ptr,
            cols,
            vals,
            diag,
            diag_inv,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        3 * self.block_rows
    }

    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn pattern(&self) -> (&[usize], &[usize]) {
        (&self.row_ptr, &self.cols)
    }

    /// Solve `L U x = b`.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        assert_eq!(b.len(), self.dim());
        assert_eq!(x.len(), self.dim());
        x.copy_from_slice(b);
        for i in 0..self.block_rows {
            let (head, tail) = x.split_at_mut(3 * i);
            let xi = &mut tail[..3];
            for p in self.row_ptr[i]..self.diag[i] {
                let c = 3 * self.cols[p];
                block_mul_sub(xi, &self.vals[p], &head[c..c + 3]);
            }
        }
        for i in (0..self.block_rows).rev() {
            let (head, tail) = x.split_at_mut(3 * i + 3);
            let xi = &mut head[3 * i..];
            let base = 3 * i + 3;
            for p in self.diag[i] + 1..self.row_ptr[i + 1] {
                let c = 3 * self.cols[p] - base;
                block_mul_sub(xi, &self.vals[p], &tail[c..c + 3]);
            }
            let r = [xi[0], xi[1], xi[2]];
            let d = &self.diag_inv[i];
            xi[0] = d[0] * r[0] + d[1] * r[1] + d[2] * r[2];
            xi[1] = d[3] * r[0] + d[4] * r[1] + d[5] * r[2];
            xi[2] = d[6] * r[0] + d[7] * r[1] + d[8] * r[2];
        }
    }
}

impl Preconditioner for BlockIlu {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve(r, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::{dense_lu_solve, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dd(nb: usize, density: f64, seed: u64) -> BlockSparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3 * nb;
        let mut d = DenseMatrix::zeros(n, n);
        for bi in 0..nb {
            for bj in 0..nb {
                if bi == bj || rng.random::<f64>() < density {
                    for r in 0..3 {
                        for c in 0..3 {
                            d.set(3 * bi + r, 3 * bj + c, rng.random_range(-1.0..1.0));
                        }
                    }
                }
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).map(|j| d.get(i, j).abs()).sum();
            d.add(i, i, s + 1.0);
        }
        BlockSparseMatrix::from_dense(&d).unwrap()
    }

    /// Structural fill of complete elimination (no cancellation), by brute force.
    fn full_fill_pattern(a: &BlockSparseMatrix) -> Vec<Vec<bool>> {
        let n = a.block_rows();
        let mut s = vec![vec![false; n]; n];
        for i in 0..n {
            for &c in a.row(i).0 {
                s[i][c] = true;
            }
        }
        for k in 0..n {
            for i in k + 1..n {
                if s[i][k] {
                    for j in k + 1..n {
                        if s[k][j] {
                            s[i][j] = true;
                        }
                    }
                }
            }
        }
        s
    }

    #[test]
    fn block_diagonal_is_exact() {
        let nb = 5;
        let mut d = DenseMatrix::zeros(15, 15);
        for b in 0..nb {
            for r in 0..3 {
                for c in 0..3 {
                    d.set(
                        3 * b + r,
                        3 * b + c,
                        if r == c {
                            3.0 + b as f64
                        } else {
                            0.5 * (r as f64 - c as f64)
                        },
                    );
                }
            }
        }
        let a = BlockSparseMatrix::from_dense(&d).unwrap();
        let ilu = BlockIlu::factor(&a, 0).unwrap();
        let x: Vec<f64> = (0..15).map(|i| i as f64 - 7.0).collect();
        let b = d.matvec(&x);
        let mut y = vec![0.0; 15];
        ilu.solve(&b, &mut y);
        for (u, v) in y.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn high_level_matches_dense_solve() {
        let a = random_dd(10, 0.3, 7);
        let ilu = BlockIlu::factor(&a, 50).unwrap();
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).cos()).collect();
        let exact = dense_lu_solve(&a, &b).unwrap();
        let mut y = vec![0.0; 30];
        ilu.solve(&b, &mut y);
        for (u, v) in y.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn infinite_level_pattern_is_full_fill() {
        let a = random_dd(12, 0.15, 3);
        let full = full_fill_pattern(&a);
        let (rp, cols) = symbolic_pattern(&a, usize::MAX);
        for i in 0..12 {
            let row: Vec<usize> = cols[rp[i]..rp[i + 1]].to_vec();
            let expect: Vec<usize> = (0..12).filter(|&j| full[i][j]).collect();
            assert_eq!(row, expect, "row {i}");
        }
    }

    #[test]
    fn patterns_grow_with_level() {
        let a = random_dd(20, 0.1, 11);
        let mut prev: Option<(Vec<usize>, Vec<usize>)> = None;
        for k in 0..5 {
            let (rp, cols) = symbolic_pattern(&a, k);
            if let Some((prp, pcols)) = &prev {
                for i in 0..20 {
                    let now = &cols[rp[i]..rp[i + 1]];
                    for c in &pcols[prp[i]..prp[i + 1]] {
                        assert!(now.binary_search(c).is_ok());
                    }
                }
            }
            prev = Some((rp, cols));
        }
    }

    #[test]
    fn singular_diagonal_block_reported() {
        let mut d = DenseMatrix::identity(6);
        d.set(4, 4, 0.0);
        d.set(4, 3, 0.0);
        let a = BlockSparseMatrix::from_dense(&d).unwrap();
        match BlockIlu::factor(&a, 0) {
            Err(Error::SingularBlock { row }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn banded_exact_within_level() {
        // block tridiagonal: LU has no fill, so ILU(0) is exact
        let nb = 8;
        let mut d = DenseMatrix::zeros(3 * nb, 3 * nb);
        for bi in 0..nb {
            for bj in bi.saturating_sub(1)..(bi + 2).min(nb) {
                for r in 0..3 {
                    for c in 0..3 {
                        let v = if bi == bj && r == c {
                            8.0
                        } else {
                            ((bi + 2 * bj + r * 3 + c) % 5) as f64 * 0.3 - 0.6
                        };
                        d.set(3 * bi + r, 3 * bj + c, v);
                    }
                }
            }
        }
        let a = BlockSparseMatrix::from_dense(&d).unwrap();
        let ilu = BlockIlu::factor(&a, 0).unwrap();
        let b: Vec<f64> = (0..3 * nb).map(|i| i as f64).collect();
        let exact = dense_lu_solve(&a, &b).unwrap();
        let mut y = vec![0.0; 3 * nb];
        ilu.solve(&b, &mut y);
        for (u, v) in y.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
