//! Approximate minimization of weighted tree automata.
//!
//! The pipeline computes the Gram matrices of an automaton's Hankel
//! factorization by fixed-point iteration, rotates the automaton into the
//! singular value canonical form, truncates it, and certifies or measures the
//! error of the truncation.

pub mod cli;
pub mod error;
pub mod gram;
pub mod grammar;
pub mod metrics;
pub mod random;
mod sexpr;
pub mod svta;
pub mod trees;
pub mod wta;

pub use error::{Error, Result};
pub use gram::{GramPair, SolverOptions};
pub use svta::Svta;
pub use trees::{Alphabet, Context, Tree};
pub use wta::Wta;
