// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aaeme;
pub mod analysis;
pub mod checkpoint;
pub mod classifiers;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod mapper;
pub mod optim;
pub mod sgns;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
