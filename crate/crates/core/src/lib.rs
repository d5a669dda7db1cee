//! Matrix-free randomized hybrid butterfly factorization.
//!
//! The crate reconstructs a butterfly representation of a matrix that is
//! only available through products with itself and its transpose, checks
//! the result against dense oracles, and models the communication cost of
//! distributed butterfly products.

pub mod butterfly;
pub mod error;
pub mod hier;
pub mod linalg;
pub mod operators;
pub mod layout;
pub mod reconstruct;

pub use error::{Error, Result};
