//! Visual-entropy-guided decoding.
//!
//! A token's visual entropy measures how evenly its activation spreads over
//! the visual positions of the prompt. Decoding penalizes high-entropy tokens
//! at steps whose leading candidate looks weakly grounded, and the `eval`
//! module scores the resulting text for object hallucination.

pub mod backends;
pub mod decoding;
pub mod entropy;
pub mod eval;
pub mod kernels;

mod error;

pub use error::{Error, Result};
