#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cache;
pub mod decoder;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod numerics;
pub mod paracat;
pub mod pons;
pub mod roi;
pub mod scheduler;
pub mod ternary;

pub use error::{Error, Result};
pub use numerics::{Matrix, ProbVector3};
pub use ternary::{Ternary, TernaryGrid};
