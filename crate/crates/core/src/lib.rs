//! Predictive conditional independence testing.
//!
//! Conditional independence `X ⟂ Y | Z` is probed by asking whether adding
//! `X` to the features available for predicting `Y` from `Z` improves
//! out-of-sample loss. Per-target p-values come from one-sided paired tests
//! on loss residuals and are pooled with Benjamini-Yekutieli control.
//! [`skeleton`] applies the test to every variable pair to estimate an
//! undirected graph; [`synth`] generates benchmark data.

pub mod data;
pub mod error;
pub mod inference;
pub mod learners;
pub mod losses;
pub mod pcit;
pub mod seed;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
