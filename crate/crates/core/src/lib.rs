//! Adversarially masked video consistency for unsupervised domain adaptation.

mod binio;
pub mod data;
pub mod error;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod train;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Error, Result};
