//! Two-input similarity models.
//!
//! Every explanation routine talks to a model through [`SimilarityModel`]:
//! forward passes yielding an [`EmbeddingBundle`], the pair score, gradients
//! of the score with respect to both inputs and with respect to the
//! designated activation layer. The crate ships one trainable model
//! ([`ContrastiveModel`], a small conv net with a projection head) and a few
//! analytic stubs used as test oracles.

mod checkpoint;
mod layers;
pub mod stubs;
mod toy;
mod train;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePair, ImageTensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Conv2d, Layer, Linear};
pub use toy::{ContrastiveModel, EmbeddingTap, ParamGrads, ToyModelConfig};
pub use train::{
    contrastive_margin, default_training_policy, nt_xent_loss, train_toy_contrastive, ToyTrainConfig, TrainedToy,
    TrainingTrace,
};

/// How rectifiers propagate gradients during backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackpropMode {
    #[default]
    Standard,
    /// Guided backpropagation: rectifiers also zero negative upstream gradients.
    Guided,
}

/// Counters collected while gradients pass through rectifiers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RectifierTrace {
    /// Number of rectifier backward applications.
    pub rectifiers: usize,
    /// Number of negative values a rectifier let through.
    pub negative_propagated: usize,
}

impl RectifierTrace {
    pub(crate) fn merge(&mut self, other: RectifierTrace) {
        self.rectifiers += other.rectifiers;
        self.negative_propagated += other.negative_propagated;
    }
}

/// Result of encoding one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    /// Vector compared by the similarity measure.
    pub embedding: Array1<f32>,
    /// Activation map `A` of the designated layer, `(K, rows, cols)`.
    pub activations: Array3<f32>,
    /// Spatial mean of `A` per channel.
    pub pooled_features: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct PairForward {
    pub score: f32,
    pub first: EmbeddingBundle,
    pub second: EmbeddingBundle,
}

/// Gradients of the pair score with respect to both input images.
#[derive(Debug, Clone)]
pub struct InputGradients {
    pub score: f32,
    pub first: Array3<f32>,
    pub second: Array3<f32>,
    pub trace: RectifierTrace,
}

/// Activations of both images at the designated layer and the gradients of
/// the pair score with respect to them.
#[derive(Debug, Clone)]
pub struct ActivationGradients {
    pub score: f32,
    pub activations1: Array3<f32>,
    pub activations2: Array3<f32>,
    pub grad1: Array3<f32>,
    pub grad2: Array3<f32>,
}

/// A model producing a similarity score for an image pair.
///
/// Implementations must be deterministic for fixed parameters and mode, and
/// must be safe to share across threads for read-only inference.
pub trait SimilarityModel: Send + Sync {
    fn name(&self) -> String;

    /// Validates that an image can be fed to the model.
    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let _ = image;
        Ok(())
    }

    fn encode(&self, image: &ImageTensor) -> Result<EmbeddingBundle>;

    /// Encodes both images and scores the pair in one go.
    fn pair_forward(&self, first: &ImageTensor, second: &ImageTensor) -> Result<PairForward> {
        let a = self.encode(first)?;
        let b = self.encode(second)?;
        let score = similarity(
            a.embedding.as_slice().expect("contiguous"),
            b.embedding.as_slice().expect("contiguous"),
        )?;
        Ok(PairForward {
            score,
            first: a,
            second: b,
        })
    }

    fn score(&self, first: &ImageTensor, second: &ImageTensor) -> Result<f32> {
        Ok(self.pair_forward(first, second)?.score)
    }

    /// Input gradients computed under an explicit backprop mode.
    fn input_gradients_with(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
        mode: BackpropMode,
    ) -> Result<InputGradients>;

    fn input_gradients(&self, first: &ImageTensor, second: &ImageTensor) -> Result<InputGradients> {
        self.input_gradients_with(first, second, self.backprop_mode())
    }

    fn activation_gradients(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
    ) -> Result<ActivationGradients>;

    fn backprop_mode(&self) -> BackpropMode;

    /// Switches the backward rule of every rectifier. Models without
    /// rectifiers accept the call and behave identically in both modes
    /// (see [`SimilarityModel::rectifier_count`]).
    fn set_backprop_mode(&mut self, mode: BackpropMode);

    fn rectifier_count(&self) -> usize {
        0
    }
}

/// Pair-level convenience wrappers.
pub fn pair_input_gradients(model: &dyn SimilarityModel, pair: &ImagePair) -> Result<InputGradients> {
    let g = model.input_gradients(&pair.first, &pair.second)?;
    crate::error::ensure_finite(g.first.iter().chain(g.second.iter()), "input gradients")?;
    Ok(g)
}

pub fn pair_activation_gradients(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
) -> Result<ActivationGradients> {
    let g = model.activation_gradients(&pair.first, &pair.second)?;
    crate::error::ensure_finite(g.grad1.iter().chain(g.grad2.iter()), "activation gradients")?;
    Ok(g)
}

fn dot_and_norms(z1: &[f32], z2: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut n1 = 0.0f64;
    let mut n2 = 0.0f64;
    for (&a, &b) in z1.iter().zip(z2) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
    }
    (dot, n1.sqrt(), n2.sqrt())
}

/// Cosine similarity `<z1, z2> / (|z1| |z2|)`, clamped to `[-1, 1]`.
pub fn similarity(z1: &[f32], z2: &[f32]) -> Result<f32> {
    if z1.len() != z2.len() {
        return Err(Error::InputShape(format!(
            "embedding lengths differ: {} vs {}",
            z1.len(),
            z2.len()
        )));
    }
    let (dot, n1, n2) = dot_and_norms(z1, z2);
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::DegenerateEmbedding("zero-norm embedding".into()));
    }
    if !dot.is_finite() || !n1.is_finite() || !n2.is_finite() {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0) as f32)
}

/// Cosine similarity together with its gradients with respect to both vectors.
pub fn similarity_backward(z1: &[f32], z2: &[f32]) -> Result<(f32, Vec<f32>, Vec<f32>)> {
    let s = similarity(z1, z2)? as f64;
    let (_, n1, n2) = dot_and_norms(z1, z2);
    let inv = 1.0 / (n1 * n2);
    let g1 = z1
        .iter()
        .zip(z2)
        .map(|(&a, &b)| (b as f64 * inv - s * a as f64 / (n1 * n1)) as f32)
        .collect();
    let g2 = z1
        .iter()
        .zip(z2)
        .map(|(&a, &b)| (a as f64 * inv - s * b as f64 / (n2 * n2)) as f32)
        .collect();
    Ok((s as f32, g1, g2))
}
