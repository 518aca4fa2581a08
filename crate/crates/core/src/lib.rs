//! Paired explanations for two-input similarity models.
//!
//! The crate explains the cosine similarity `s = sim(z1, z2)` of a
//! contrastive encoder applied to two images. It provides saliency maps
//! ([`saliency`]), occlusion maps ([`perturbation`]), activation maps
//! ([`cam`]), evaluation metrics ([`metrics`]) and feature inversion
//! ([`inversion`]), all driven through the [`model::SimilarityModel`] trait.

pub mod cam;
pub mod corpus;
pub mod error;
pub mod image;
pub mod inversion;
pub mod methods;
pub mod metrics;
pub mod model;
pub mod perturbation;
pub mod saliency;
pub mod transforms;

pub use error::{Error, Result};
pub use image::{AugmentationRecord, ImagePair, ImageTensor};
pub use model::{BackpropMode, ContrastiveModel, SimilarityModel};
