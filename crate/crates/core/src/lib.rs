// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod families;
pub mod linalg;
pub mod quadrature;
pub mod similarity;

pub use error::{Error, Result};
pub mod metric;
pub mod optimizer;
pub mod gp_bench;
pub mod validation;
