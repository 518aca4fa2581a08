//! Contrastive training of the toy encoder with the normalized-temperature
//! cross-entropy over in-batch positives and negatives.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::toy::{ContrastiveModel, ParamGrads, ToyModelConfig};
use super::{BackpropMode, RectifierTrace, SimilarityModel};
use crate::corpus::ShapeCorpus;
use crate::error::{Error, Result};
use crate::transforms::{augment_pair, AugmentPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub dataset_size: usize,
    pub image_side: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f32,
    pub learning_rate: f32,
    pub seed: u64,
    #[serde(default)]
    pub model: ToyModelConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            dataset_size: 512,
            image_side: 32,
            batch_size: 32,
            epochs: 20,
            temperature: 0.1,
            learning_rate: 5e-3,
            seed: 0,
            model: ToyModelConfig::default(),
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 || self.image_side == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Argument("training counts must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Argument("batch_size must be at least 2 to form negatives".into()));
        }
        if !(self.temperature > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Argument("temperature and learning_rate must be positive".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Loss of the first batch before any update.
    pub initial_loss: f32,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f32>,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> f32 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedToy {
    pub model: ContrastiveModel,
    pub trace: TrainingTrace,
    pub config: ToyTrainConfig,
}

/// Milder than [`AugmentPolicy::contrastive_default`]: at 32 pixels the
/// stronger policy leaves too little signal for a short training run.
pub fn default_training_policy() -> AugmentPolicy {
    use crate::transforms::AugmentOp;
    AugmentPolicy {
        ops: vec![
            AugmentOp::RandomResizedCrop {
                scale: (0.6, 1.0),
                ratio: (0.75, 4.0 / 3.0),
            },
            AugmentOp::HorizontalFlip { p: 0.5 },
            AugmentOp::ColorJitter {
                p: 0.5,
                brightness: 0.3,
                contrast: 0.3,
                saturation: 0.3,
                hue: 0.05,
            },
            AugmentOp::Grayscale { p: 0.1 },
            AugmentOp::GaussianBlur {
                p: 0.3,
                sigma: (0.1, 1.0),
            },
        ],
    }
}

/// Loss and its gradient for `2B` embeddings where rows `i` and `i + B` are
/// the two views of sample `i`.
pub fn nt_xent_loss(embeddings: &Array2<f32>, temperature: f32) -> Result<(f32, Array2<f32>)> {
    let (n, d) = embeddings.dim();
    if n < 4 || n % 2 != 0 {
        return Err(Error::Argument(format!("need an even number >= 4 of embeddings, got {n}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument("temperature must be positive".into()));
    }
    let b = n / 2;
    let tau = temperature as f64;
    let z: Array2<f64> = embeddings.mapv(|v| v as f64);
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateEmbedding("zero or non-finite embedding in batch".into()));
    }
    let mut u = z.clone();
    for (mut row, &nr) in u.rows_mut().into_iter().zip(&norms) {
        row /= nr;
    }
    let sim = u.dot(&u.t()) / tau;

    let mut loss = 0.0;
    let mut d_sim = Array2::<f64>::zeros((n, n));
    for r in 0..n {
        let p = (r + b) % n;
        let max = (0..n).filter(|&k| k != r).map(|k| sim[[r, k]]).fold(f64::MIN, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != r).map(|k| (sim[[r, k]] - max).exp()).sum();
        loss += -(sim[[r, p]] - max) + denom.ln();
        for k in 0..n {
            if k == r {
                continue;
            }
            let soft = (sim[[r, k]] - max).exp() / denom;
            d_sim[[r, k]] = (soft - if k == p { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    loss /= n as f64;

    let sym = &d_sim + &d_sim.t();
    let du = sym.dot(&u) / tau;
    let mut dz = Array2::<f32>::zeros((n, d));
    for r in 0..n {
        let ur = u.row(r);
        let dur = du.row(r);
        let proj = ur.dot(&dur);
        for j in 0..d {
            dz[[r, j]] = ((dur[j] - proj * ur[j]) / norms[r]) as f32;
        }
    }
    Ok((loss as f32, dz))
}

struct Adam {
    lr: f32,
    t: i32,
    m: ParamGrads,
    v: ParamGrads,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(model: &ContrastiveModel, lr: f32) -> Self {
        Self {
            lr,
            t: 0,
            m: ParamGrads::zeros_like(model),
            v: ParamGrads::zeros_like(model),
        }
    }

    fn step(&mut self, model: &mut ContrastiveModel, g: &ParamGrads) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + Self::EPS);
            }
        };
        for (idx, layer) in model.layers_mut().iter_mut().enumerate() {
            update(layer.weight_slice_mut(), &g.weights[idx], &mut self.m.weights[idx], &mut self.v.weights[idx]);
            update(layer.bias_slice_mut(), &g.biases[idx], &mut self.m.biases[idx], &mut self.v.biases[idx]);
        }
    }
}

fn view_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((epoch as u64) << 32)
        ^ index as u64
}

/// Trains the toy encoder on the procedural shape corpus.
pub fn train_toy_contrastive(config: &ToyTrainConfig) -> Result<TrainedToy> {
    config.validate()?;
    let mut model = ContrastiveModel::new(ToyModelConfig {
        init_seed: config.seed,
        ..config.model.clone()
    })?;
    model.check_input(&crate::image::ImageTensor::zeros(config.image_side, config.image_side))?;
    let corpus = ShapeCorpus::new(config.seed, config.image_side);
    let images: Vec<_> = (0..config.dataset_size).map(|i| corpus.image(i)).collect();
    let policy = default_training_policy();
    let batch = config.batch_size.min(config.dataset_size);
    if batch < 2 {
        return Err(Error::Argument("dataset too small to form a batch of two".into()));
    }
    let tap = model.config().embedding_tap;
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7121_5eed);
    let mut order: Vec<usize> = (0..config.dataset_size).collect();
    let mut initial_loss = None;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut history = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();
            let mut traces = Vec::with_capacity(2 * b);
            let mut seconds = Vec::with_capacity(b);
            for &idx in chunk {
                let pair = augment_pair(&images[idx], &policy, view_seed(config.seed, epoch, idx));
                traces.push(model.trace_image(pair.first.data()));
                seconds.push(model.trace_image(pair.second.data()));
            }
            traces.extend(seconds);
            let dim = traces[0].embedding(tap).len();
            let mut emb = Array2::<f32>::zeros((2 * b, dim));
            for (r, t) in traces.iter().enumerate() {
                emb.row_mut(r).assign(t.embedding(tap));
            }
            let (loss, d_emb) = nt_xent_loss(&emb, config.temperature)?;
            history.push(loss);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, trace: history });
            }
            initial_loss.get_or_insert(loss);
            total += loss as f64;
            batches += 1;

            let mut grads = ParamGrads::zeros_like(&model);
            let mut rect = RectifierTrace::default();
            for (r, t) in traces.iter().enumerate() {
                let d: Array1<f32> = d_emb.row(r).to_owned();
                model.backward(t, &d, BackpropMode::Standard, false, Some(&mut grads), &mut rect);
            }
            if grads.weights.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, trace: history });
            }
            adam.step(&mut model, &grads);
        }
        epoch_losses.push((total / batches.max(1) as f64) as f32);
    }

    Ok(TrainedToy {
        model,
        trace: TrainingTrace {
            initial_loss: initial_loss.unwrap_or(f32::NAN),
            epoch_losses,
        },
        config: config.clone(),
    })
}

/// Mean positive-pair cosine minus mean negative-pair cosine over `count`
/// images starting at `start`; negatives pair each first view with the
/// next image's second view.
pub fn contrastive_margin<M: SimilarityModel + ?Sized>(
    model: &M,
    corpus: &ShapeCorpus,
    start: usize,
    count: usize,
    seed: u64,
) -> Result<f32> {
    let policy = default_training_policy();
    let pairs: Vec<_> = (0..count)
        .map(|i| augment_pair(&corpus.image(start + i), &policy, seed.wrapping_add(i as u64)))
        .collect();
    let mut pos = 0.0f64;
    let mut neg = 0.0f64;
    for i in 0..count {
        pos += model.score(&pairs[i].first, &pairs[i].second)? as f64;
        neg += model.score(&pairs[i].first, &pairs[(i + 1) % count].second)? as f64;
    }
    Ok(((pos - neg) / count.max(1) as f64) as f32)
}
