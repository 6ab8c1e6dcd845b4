//! Low-rank canonical polyadic approximation of dense real tensors where the
//! last `t` of `d` factor matrices have orthonormal columns.
//!
//! The solver is ε-ALS: a Gauss–Seidel sweep over the unit-norm factor
//! columns, polar-decomposition updates for the orthonormal factors and a
//! closed-form weight update, each block shifted by a small multiple of its
//! previous iterate. A truncated-HOSVD plus recursive rank-1 initializer,
//! KKT diagnostics and a seeded experiment harness round out the crate.

pub mod error;
pub mod harness;
pub mod init;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use matrix::{khatri_rao, Matrix};
pub use model::{FactorSet, KktReport};
pub use solver::{IterationTrace, SolverConfig, Status};
pub use tensor::{cp_reconstruct, DenseTensor};
