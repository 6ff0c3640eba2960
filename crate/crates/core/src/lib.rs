//! Post-traumatic epilepsy risk prediction from serialized clinical records.

pub mod cohort;
pub mod embedder;
pub mod eval;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod serializer;
mod util;

pub use util::{sha256_hex, write_atomic};

pub use error::{Error, ErrorCategory, Result};
