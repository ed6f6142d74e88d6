//! Test-only oracles: finite differences and randomized gradient suites.

pub mod gradcheck;
pub mod suites;

pub use gradcheck::{check, GradCheck};
