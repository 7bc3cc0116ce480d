//! All-at-once space-time solver for the inverse convection-diffusion source
//! problem in three dimensions.
//!
//! The state `C`, adjoint `G` and source `f` at every mesh node and every time
//! level are assembled into one point-block KKT system and solved by a Krylov
//! method preconditioned with one- or two-level space-time restricted Schwarz.
//!
//! Module map:
//! - [`mesh`]: structured tetrahedral meshes, time grids, space-time decompositions
//! - [`fem`]: P1 element matrices and spatial/temporal operator assembly
//! - [`forward`]: Crank–Nicolson forward solver and synthetic observations
//! - [`kkt`]: global KKT operator, right-hand side, objective
//! - [`linalg`]: block sparse storage, block ILU(k), GMRES/fGMRES, dense LU
//! - [`schwarz`]: one-level RAS and the two-level hybrid preconditioner
//! - [`experiment`]: analytic sources, run configuration, inversion driver, VTK output

pub mod error;
pub mod experiment;
pub mod fem;
pub mod forward;
pub mod kkt;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod schwarz;

pub use error::{Error, Result};
