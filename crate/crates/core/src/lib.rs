// `!(x > 0.0)` checks below also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codebooks;
pub mod error;
pub mod estimators;
pub mod feedback;
pub mod gmm;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod par;
pub mod precoding;
pub mod pilots;
pub mod rng;

pub use error::{Error, Result};
