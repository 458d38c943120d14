//! Multiscale finite elements with spectral local bases on structured 2D grids.
//!
//! The crate covers the classical pipeline end to end: nested coarse/fine
//! grids and their overlapping local domains, Karhunen-Loève coefficient
//! fields, P1 assembly and fine reference solves, the local generalized
//! eigenproblems that define the multiscale space, the coarse projection
//! (linear diffusion and a Picard loop for the Haverkamp-type Richards
//! problem) and the subspace losses used to train basis predictors.

pub mod error;
pub mod field;
pub mod fem;
pub mod gmsfem;
pub mod grid;
pub mod linalg;
pub mod msbasis;
pub mod rng;
pub mod subspace;

pub use error::{Error, Result};
pub use grid::{DomainKind, GridPair, LocalDomain, NodalField, Orientation, PatchBox};
