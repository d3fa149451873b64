//! Encoder, classifier head and reconstruction model, their composition, and
//! checkpoint persistence.

mod checkpoint;
mod classifier;
mod config;
mod params;
mod vae;

pub use checkpoint::{Checkpoint, ModelKind, TrainingMeta, MAGIC, VERSION};
pub use classifier::{encode, ClassifierModel, NUM_CLASSES};
pub use config::{fingerprint, EncoderConfig, Stage};
pub use params::{BoundParams, ParamStore};
pub use vae::{compose_adapted, Mode, VaeModel, VaeOutput, VaeVars, DEFAULT_LATENT_CHANNELS};
