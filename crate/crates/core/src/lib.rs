//! Source-free adaptation of a binary image classifier: a VGG-style source
//! classifier's encoder is transplanted into a VAE, trained on unlabeled
//! target images, and recomposed with the frozen source head.

pub mod error;
pub mod io;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod verify;
pub mod models;

pub use error::{Error, Result};
