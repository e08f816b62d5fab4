//! Concept-level representational similarity between two neural networks.
//!
//! Given activation matrices dumped from two models over the same image
//! patches, the crate extracts concepts by matrix factorization, scores how
//! well each model's activations predict the other model's concept
//! coefficients, relates dissimilar concepts to classifier behavior, and
//! selects the patches that explain each difference.

pub mod actio;
pub mod attribute;
pub mod error;
pub mod explain;
pub mod factorize;
mod linalg;
pub mod regress;
pub mod replace;
pub mod similarity;
pub mod synthgen;

pub use error::{Error, Result};
