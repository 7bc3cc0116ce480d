//! Linear algebra: point-block sparse storage, block ILU(k), Krylov solvers
//! and small dense factorizations.

pub mod block;
pub mod csr;
pub mod dense;
pub mod ilu;
pub mod krylov;

pub use block::{Block, BlockSparseMatrix, IDENTITY_BLOCK, ZERO_BLOCK};
pub use csr::{CsrMatrix, Ilu0};
pub use dense::{dense_lu_solve, DenseLu, DenseMatrix, DENSE_LIMIT};
pub use ilu::BlockIlu;
pub use krylov::{
    fgmres, gmres, FnPreconditioner, IdentityPreconditioner, KrylovConfig, LinearOperator, Preconditioner, SolveReport,
};
