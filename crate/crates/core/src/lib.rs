//! Learning a compact, interpretable attribute set for image classification
//! by fitting a dictionary in text-embedding space and snapping it to a
//! pool of named attributes.

pub mod baselines;
pub mod error;
pub mod interpret;
pub mod io;
pub mod optim;
pub mod probe;
pub mod projection;
pub mod prompts;
pub mod selector;
pub mod stats;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
