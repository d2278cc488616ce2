//! Tail bounds for multiple random integrals and degenerate U-statistics on
//! finite probability spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod chaos;
pub mod decomposition;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod measure_space;
pub mod statistics;

pub use error::{Error, Result};
