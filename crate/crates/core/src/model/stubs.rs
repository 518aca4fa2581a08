//! Analytic models with closed-form scores and gradients, used as oracles.

use ndarray::{Array1, Array3, Axis};

use super::{
    similarity, similarity_backward, ActivationGradients, BackpropMode, EmbeddingBundle,
    InputGradients, PairForward, RectifierTrace, SimilarityModel,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Box-filter downsampling by an integer factor, `(C, H, W) -> (C, H/f, W/f)`.
pub fn average_pool(x: &Array3<f32>, factor: usize) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f32;
    Array3::from_shape_fn((c, oh, ow), |(ch, y, xx)| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += x[[ch, y * factor + dy, xx * factor + dx]];
            }
        }
        acc * inv
    })
}

fn spread(grad: &Array3<f32>, factor: usize, shape: (usize, usize, usize)) -> Array3<f32> {
    let inv = 1.0 / (factor * factor) as f32;
    Array3::from_shape_fn(shape, |(c, y, x)| {
        let (py, px) = (y / factor, x / factor);
        if py < grad.dim().1 && px < grad.dim().2 {
            grad[[c, py, px]] * inv
        } else {
            0.0
        }
    })
}

fn channel_means(a: &Array3<f32>) -> Array1<f32> {
    let n = (a.dim().1 * a.dim().2).max(1) as f32;
    a.sum_axis(Axis(2)).sum_axis(Axis(1)) / n
}

/// Returns a fixed score regardless of its inputs.
#[derive(Debug, Clone)]
pub struct ConstantStub {
    pub value: f32,
    pub embedding: Array1<f32>,
    pub factor: usize,
}

impl ConstantStub {
    pub fn new(value: f32) -> Self {
        Self {
            value,
            embedding: Array1::from(vec![1.0, 0.0]),
            factor: 4,
        }
    }
}

impl SimilarityModel for ConstantStub {
    fn name(&self) -> String {
        "constant-stub".into()
    }

    fn encode(&self, image: &ImageTensor) -> Result<EmbeddingBundle> {
        let a = average_pool(image.data(), self.factor);
        Ok(EmbeddingBundle {
            embedding: self.embedding.clone(),
            pooled_features: channel_means(&a),
            activations: a,
        })
    }

    fn pair_forward(&self, first: &ImageTensor, second: &ImageTensor) -> Result<PairForward> {
        Ok(PairForward {
            score: self.value,
            first: self.encode(first)?,
            second: self.encode(second)?,
        })
    }

    fn score(&self, _: &ImageTensor, _: &ImageTensor) -> Result<f32> {
        Ok(self.value)
    }

    fn input_gradients_with(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
        _: BackpropMode,
    ) -> Result<InputGradients> {
        Ok(InputGradients {
            score: self.value,
            first: Array3::zeros(first.shape()),
            second: Array3::zeros(second.shape()),
            trace: RectifierTrace::default(),
        })
    }

    fn activation_gradients(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
    ) -> Result<ActivationGradients> {
        let a1 = average_pool(first.data(), self.factor);
        let a2 = average_pool(second.data(), self.factor);
        Ok(ActivationGradients {
            score: self.value,
            grad1: Array3::zeros(a1.dim()),
            grad2: Array3::zeros(a2.dim()),
            activations1: a1,
            activations2: a2,
        })
    }

    fn backprop_mode(&self) -> BackpropMode {
        BackpropMode::Standard
    }

    fn set_backprop_mode(&mut self, _: BackpropMode) {}
}

/// `s = <w, I1> + <w, I2>`: a linear two-input score whose input gradient is
/// `w` for both images.
#[derive(Debug, Clone)]
pub struct LinearStub {
    pub weights: Array3<f32>,
}

impl LinearStub {
    pub fn new(weights: Array3<f32>) -> Self {
        Self { weights }
    }

    /// Weights drawn uniformly from `[-1, 1]`.
    pub fn random(height: usize, width: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::new(Array3::from_shape_fn((3, height, width), |_| rng.random_range(-1.0..1.0f32)))
    }

    fn check(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.weights.dim() {
            return Err(Error::InputShape(format!(
                "linear stub expects {:?}, got {:?}",
                self.weights.dim(),
                image.shape()
            )));
        }
        Ok(())
    }
}

impl SimilarityModel for LinearStub {
    fn name(&self) -> String {
        "linear-stub".into()
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        self.check(image)
    }

    fn encode(&self, _: &ImageTensor) -> Result<EmbeddingBundle> {
        Err(Error::Unsupported("linear stub has no embedding".into()))
    }

    fn pair_forward(&self, _: &ImageTensor, _: &ImageTensor) -> Result<PairForward> {
        Err(Error::Unsupported("linear stub has no embedding".into()))
    }

    fn score(&self, first: &ImageTensor, second: &ImageTensor) -> Result<f32> {
        self.check(first)?;
        self.check(second)?;
        let dot = |x: &Array3<f32>| {
            x.iter()
                .zip(self.weights.iter())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>()
        };
        Ok((dot(first.data()) + dot(second.data())) as f32)
    }

    fn input_gradients_with(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
        _: BackpropMode,
    ) -> Result<InputGradients> {
        Ok(InputGradients {
            score: self.score(first, second)?,
            first: self.weights.clone(),
            second: self.weights.clone(),
            trace: RectifierTrace::default(),
        })
    }

    fn activation_gradients(&self, _: &ImageTensor, _: &ImageTensor) -> Result<ActivationGradients> {
        Err(Error::Unsupported("linear stub has no activation layer".into()))
    }

    fn backprop_mode(&self) -> BackpropMode {
        BackpropMode::Standard
    }

    fn set_backprop_mode(&mut self, _: BackpropMode) {}
}

/// Cosine similarity of box-downsampled images: a normalized overlap score.
/// The downsampled image serves as the activation map and the embedding.
#[derive(Debug, Clone)]
pub struct OverlapStub {
    pub factor: usize,
}

impl OverlapStub {
    pub fn new(factor: usize) -> Self {
        Self { factor }
    }
}

impl SimilarityModel for OverlapStub {
    fn name(&self) -> String {
        "overlap-stub".into()
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        if image.height() % self.factor != 0 || image.width() % self.factor != 0 {
            return Err(Error::InputShape(format!(
                "image sides must be divisible by {}",
                self.factor
            )));
        }
        Ok(())
    }

    fn encode(&self, image: &ImageTensor) -> Result<EmbeddingBundle> {
        self.check_input(image)?;
        let a = average_pool(image.data(), self.factor);
        Ok(EmbeddingBundle {
            embedding: Array1::from(a.iter().copied().collect::<Vec<_>>()),
            pooled_features: channel_means(&a),
            activations: a,
        })
    }

    fn score(&self, first: &ImageTensor, second: &ImageTensor) -> Result<f32> {
        self.check_input(first)?;
        self.check_input(second)?;
        let a = average_pool(first.data(), self.factor);
        let b = average_pool(second.data(), self.factor);
        similarity(a.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"))
    }

    fn input_gradients_with(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
        _: BackpropMode,
    ) -> Result<InputGradients> {
        let g = self.activation_gradients(first, second)?;
        Ok(InputGradients {
            score: g.score,
            first: spread(&g.grad1, self.factor, first.shape()),
            second: spread(&g.grad2, self.factor, second.shape()),
            trace: RectifierTrace::default(),
        })
    }

    fn activation_gradients(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
    ) -> Result<ActivationGradients> {
        self.check_input(first)?;
        self.check_input(second)?;
        let a1 = average_pool(first.data(), self.factor);
        let a2 = average_pool(second.data(), self.factor);
        let (score, g1, g2) =
            similarity_backward(a1.as_slice().expect("contiguous"), a2.as_slice().expect("contiguous"))?;
        Ok(ActivationGradients {
            score,
            grad1: Array3::from_shape_vec(a1.dim(), g1).expect("shape"),
            grad2: Array3::from_shape_vec(a2.dim(), g2).expect("shape"),
            activations1: a1,
            activations2: a2,
        })
    }

    fn backprop_mode(&self) -> BackpropMode {
        BackpropMode::Standard
    }

    fn set_backprop_mode(&mut self, _: BackpropMode) {}
}
