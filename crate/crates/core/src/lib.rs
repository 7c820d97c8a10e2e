//! Core algorithms for a computational grounded theory workbench.
//!
//! The crate is `no_std` (with `alloc`) and holds everything that is a pure
//! function of its inputs: text preprocessing and corpus construction,
//! collapsed-Gibbs LDA, the four model-selection metrics and rank-sum K
//! selection, concurrent validation and term ledgers, and the query-driven
//! topic hierarchy (seeded main topics plus HDP subtopics).
//!
//! IO, file formats, parallel sweeps, the HTTP service and the CLI live in
//! the companion `cgt` crate.
#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod corpus;
pub mod digest;
mod error;
pub mod lda;
pub mod linalg;
pub mod qdtm;
pub mod rng;
pub mod selection;
pub mod validation;

pub use error::{Error, Result};
