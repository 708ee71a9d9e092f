//! Tonal tension analysis and tension-controlled generation for melody+bass
//! fragments.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod latent;
pub mod spiral;
pub mod vae;

pub use error::{Error, Result};
