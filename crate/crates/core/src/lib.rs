#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod layout;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod swgformer;

pub use error::{Error, ErrorKind, Result};
