use ndarray::{Array1, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward_1d, relu_backward_3d, Conv2d, Layer, Linear};
use super::{
    similarity_backward, ActivationGradients, BackpropMode, EmbeddingBundle, InputGradients,
    RectifierTrace, SimilarityModel,
};
use crate::error::{ensure_finite, Error, Result};
use crate::image::ImageTensor;

/// Which vector the similarity measure compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingTap {
    /// Projection-head output `z`.
    #[default]
    Projector,
    /// Average-pooled output of the last backbone stage.
    Pooled,
}

/// Architecture of the desk-scale encoder: conv stages (3x3, ReLU) followed
/// by global average pooling and a two-layer projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub projector_hidden: usize,
    pub embedding_dim: usize,
    /// 1-based backbone stage whose output is the CAM activation map `A`.
    pub activation_stage: usize,
    pub embedding_tap: EmbeddingTap,
    pub init_seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![8, 16, 32, 32],
            stage_strides: vec![1, 2, 2, 2],
            projector_hidden: 64,
            embedding_dim: 32,
            activation_stage: 4,
            embedding_tap: EmbeddingTap::Projector,
            init_seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn downsampling(&self) -> usize {
        self.stage_strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.stage_strides.len() {
            return Err(Error::Argument(
                "stage_channels and stage_strides must be non-empty and equally long".into(),
            ));
        }
        if self.stage_strides.iter().any(|&s| s == 0) || self.stage_channels.iter().any(|&c| c == 0)
        {
            return Err(Error::Argument("strides and channels must be positive".into()));
        }
        if self.activation_stage == 0 || self.activation_stage > self.stage_channels.len() {
            return Err(Error::Argument(format!(
                "activation_stage {} outside 1..={}",
                self.activation_stage,
                self.stage_channels.len()
            )));
        }
        if self.projector_hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::Argument("projector sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter gradients aligned with [`ContrastiveModel::layers`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &ContrastiveModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weight_slice().len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias_slice().len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Forward record of one image.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub input: Array3<f32>,
    /// Post-rectifier output of every executed stage.
    pub stages: Vec<Array3<f32>>,
    pub pooled: Array1<f32>,
    pub hidden: Array1<f32>,
    pub projected: Array1<f32>,
}

impl Trace {
    pub fn embedding(&self, tap: EmbeddingTap) -> &Array1<f32> {
        match tap {
            EmbeddingTap::Projector => &self.projected,
            EmbeddingTap::Pooled => &self.pooled,
        }
    }
}

pub(crate) struct BackwardOutput {
    pub activation_grad: Array3<f32>,
    pub input_grad: Option<Array3<f32>>,
}

/// Desk-scale contrastive encoder (conv backbone + projection head).
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveModel {
    config: ToyModelConfig,
    /// Backbone stages followed by the two projector layers.
    layers: Vec<Layer>,
    mode: BackpropMode,
}

fn spatial_mean(a: &Array3<f32>) -> Array1<f32> {
    let n = (a.dim().1 * a.dim().2) as f32;
    a.sum_axis(Axis(2)).sum_axis(Axis(1)) / n
}

impl ContrastiveModel {
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut layers = Vec::new();
        let mut in_ch = 3;
        for (i, (&ch, &stride)) in config
            .stage_channels
            .iter()
            .zip(&config.stage_strides)
            .enumerate()
        {
            rng.set_stream(i as u64);
            layers.push(Layer::Conv(Conv2d::he_init(in_ch, ch, stride, &mut rng)));
            in_ch = ch;
        }
        let n = layers.len();
        rng.set_stream(n as u64);
        layers.push(Layer::Linear(Linear::he_init(in_ch, config.projector_hidden, &mut rng)));
        rng.set_stream(n as u64 + 1);
        layers.push(Layer::Linear(Linear::he_init(
            config.projector_hidden,
            config.embedding_dim,
            &mut rng,
        )));
        Ok(Self {
            config,
            layers,
            mode: BackpropMode::Standard,
        })
    }

    /// Rebuilds a model from a config and explicit layers (checkpoint loading).
    pub fn from_parts(config: ToyModelConfig, layers: Vec<Layer>) -> Result<Self> {
        let reference = Self::new(config.clone())?;
        if reference.layers.len() != layers.len() {
            return Err(Error::Argument("layer count does not match config".into()));
        }
        for (a, b) in reference.layers.iter().zip(&layers) {
            let same = match (a, b) {
                (Layer::Conv(x), Layer::Conv(y)) => {
                    x.weight.dim() == y.weight.dim() && x.stride == y.stride && y.bias.len() == x.bias.len()
                }
                (Layer::Linear(x), Layer::Linear(y)) => {
                    x.weight.dim() == y.weight.dim() && y.bias.len() == x.bias.len()
                }
                _ => false,
            };
            if !same {
                return Err(Error::Argument("layer shapes do not match config".into()));
            }
        }
        Ok(Self {
            config,
            layers,
            mode: BackpropMode::Standard,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_stages(&self) -> usize {
        self.config.stage_channels.len()
    }

    /// Names of the parameter groups, bottom to top.
    pub fn layer_names(&self) -> Vec<String> {
        let n = self.num_stages();
        (0..self.layers.len())
            .map(|i| {
                if i < n {
                    format!("backbone.{i}")
                } else {
                    format!("projector.{}", i - n)
                }
            })
            .collect()
    }

    pub fn with_embedding_tap(mut self, tap: EmbeddingTap) -> Self {
        self.config.embedding_tap = tap;
        self
    }

    pub fn with_activation_stage(mut self, stage: usize) -> Result<Self> {
        self.config.activation_stage = stage;
        self.config.validate()?;
        Ok(self)
    }

    pub fn with_backprop_mode(mut self, mode: BackpropMode) -> Self {
        self.mode = mode;
        self
    }

    fn conv(&self, i: usize) -> &Conv2d {
        match &self.layers[i] {
            Layer::Conv(c) => c,
            Layer::Linear(_) => unreachable!("backbone layers are convolutions"),
        }
    }

    fn linear(&self, i: usize) -> &Linear {
        match &self.layers[self.num_stages() + i] {
            Layer::Linear(l) => l,
            Layer::Conv(_) => unreachable!("projector layers are linear"),
        }
    }

    /// Copy of the model whose top `from_top_count` parameter groups are
    /// re-drawn from the initializer. Each group draws from its own seeded
    /// stream, so cascades at increasing depth share the already-randomized
    /// groups.
    pub fn randomize_layers(&self, from_top_count: usize, seed: u64) -> Result<Self> {
        let n = self.layers.len();
        if from_top_count > n {
            return Err(Error::Argument(format!(
                "cannot randomize {from_top_count} of {n} layers"
            )));
        }
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for idx in (n - from_top_count)..n {
            rng.set_stream(idx as u64);
            rng.set_word_pos(0);
            out.layers[idx].reinitialize(&mut rng);
        }
        Ok(out)
    }

    pub(crate) fn trace(&self, image: &Array3<f32>, upto_stage: Option<usize>) -> Trace {
        let n = self.num_stages();
        let stop = upto_stage.unwrap_or(n);
        let mut stages = Vec::with_capacity(stop);
        let mut x = image.clone();
        for i in 0..stop {
            let mut y = self.conv(i).forward(&x);
            y.mapv_inplace(|v| v.max(0.0));
            stages.push(y.clone());
            x = y;
        }
        if stop < n {
            return Trace {
                input: image.clone(),
                stages,
                pooled: Array1::zeros(0),
                hidden: Array1::zeros(0),
                projected: Array1::zeros(0),
            };
        }
        let pooled = spatial_mean(&x);
        let mut hidden = self.linear(0).forward(&pooled);
        hidden.mapv_inplace(|v| v.max(0.0));
        let projected = self.linear(1).forward(&hidden);
        Trace {
            input: image.clone(),
            stages,
            pooled,
            hidden,
            projected,
        }
    }

    /// Backpropagates a gradient on the embedding down to the input.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        d_embedding: &Array1<f32>,
        mode: BackpropMode,
        need_input: bool,
        mut grads: Option<&mut ParamGrads>,
        rect: &mut RectifierTrace,
    ) -> BackwardOutput {
        let n = self.num_stages();
        let d_pooled = match self.config.embedding_tap {
            EmbeddingTap::Pooled => d_embedding.clone(),
            EmbeddingTap::Projector => {
                let mut d_hidden = self.linear(1).backward(
                    &trace.hidden,
                    d_embedding,
                    grads
                        .as_deref_mut()
                        .map(|g| split_pair(g, n + 1)),
                );
                relu_backward_1d(&trace.hidden, &mut d_hidden, mode, rect);
                self.linear(0)
                    .backward(&trace.pooled, &d_hidden, grads.as_deref_mut().map(|g| split_pair(g, n)))
            }
        };
        let last = &trace.stages[n - 1];
        let (k, h, w) = last.dim();
        let scale = 1.0 / (h * w) as f32;
        let d_post = Array3::from_shape_fn((k, h, w), |(c, _, _)| d_pooled[c] * scale);
        self.backward_stages(trace, n, d_post, mode, need_input, grads, rect)
    }

    /// Backpropagates `d_post` (gradient on the output of stage `from_stage`,
    /// 1-based) through the backbone.
    pub(crate) fn backward_stages(
        &self,
        trace: &Trace,
        from_stage: usize,
        mut d_post: Array3<f32>,
        mode: BackpropMode,
        need_input: bool,
        mut grads: Option<&mut ParamGrads>,
        rect: &mut RectifierTrace,
    ) -> BackwardOutput {
        let act_stage = self.config.activation_stage;
        let mut activation_grad = None;
        let train = grads.is_some();
        for i in (0..from_stage).rev() {
            if i + 1 == act_stage {
                activation_grad = Some(d_post.clone());
                if !need_input && !train {
                    break;
                }
            }
            relu_backward_3d(&trace.stages[i], &mut d_post, mode, rect);
            let input = if i == 0 { &trace.input } else { &trace.stages[i - 1] };
            let want_input = i > 0 || need_input;
            let gi = self.conv(i).backward(
                input,
                &d_post,
                want_input,
                grads.as_deref_mut().map(|g| split_pair(g, i)),
            );
            match gi {
                Some(g) => d_post = g,
                None => break,
            }
        }
        let input_grad = need_input.then_some(d_post);
        BackwardOutput {
            activation_grad: activation_grad.unwrap_or_else(|| Array3::zeros((0, 0, 0))),
            input_grad,
        }
    }

    fn bundle(&self, trace: &Trace) -> EmbeddingBundle {
        let a = trace.stages[self.config.activation_stage - 1].clone();
        EmbeddingBundle {
            embedding: trace.embedding(self.config.embedding_tap).clone(),
            pooled_features: spatial_mean(&a),
            activations: a,
        }
    }

    /// Output of backbone stage `stage` (1-based).
    pub fn stage_features(&self, image: &ImageTensor, stage: usize) -> Result<Array3<f32>> {
        self.check_stage(stage)?;
        self.check_input(image)?;
        let mut t = self.trace(image.data(), Some(stage));
        Ok(t.stages.pop().expect("at least one stage"))
    }

    /// Features at `stage` and the input gradient of `<grad_fn(features), features>`.
    pub fn stage_features_backward(
        &self,
        image: &Array3<f32>,
        stage: usize,
        grad_fn: impl FnOnce(&Array3<f32>) -> Array3<f32>,
    ) -> Result<(Array3<f32>, Array3<f32>)> {
        self.check_stage(stage)?;
        let t = self.trace(image, Some(stage));
        let feats = t.stages[stage - 1].clone();
        let d = grad_fn(&feats);
        let mut rect = RectifierTrace::default();
        let out = self.backward_stages(&t, stage, d, self.mode, true, None, &mut rect);
        Ok((feats, out.input_grad.expect("requested")))
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if stage == 0 || stage > self.num_stages() {
            return Err(Error::Argument(format!(
                "layer {stage} outside 1..={}",
                self.num_stages()
            )));
        }
        Ok(())
    }

    /// Embedding computed from an activation map at the designated layer.
    pub fn embedding_from_activations(&self, a: &Array3<f32>) -> Array1<f32> {
        let mut x = a.clone();
        for i in self.config.activation_stage..self.num_stages() {
            x = self.conv(i).forward(&x);
            x.mapv_inplace(|v| v.max(0.0));
        }
        let pooled = spatial_mean(&x);
        match self.config.embedding_tap {
            EmbeddingTap::Pooled => pooled,
            EmbeddingTap::Projector => {
                let mut h = self.linear(0).forward(&pooled);
                h.mapv_inplace(|v| v.max(0.0));
                self.linear(1).forward(&h)
            }
        }
    }

    pub(crate) fn trace_image(&self, image: &Array3<f32>) -> Trace {
        self.trace(image, None)
    }
}

fn split_pair(g: &mut ParamGrads, idx: usize) -> (&mut [f32], &mut [f32]) {
    (g.weights[idx].as_mut_slice(), g.biases[idx].as_mut_slice())
}

impl SimilarityModel for ContrastiveModel {
    fn name(&self) -> String {
        "toy-contrastive".into()
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let (c, h, w) = image.shape();
        let f = self.config.downsampling();
        if c != 3 || h < 16 || w < 16 || h % f != 0 || w % f != 0 {
            return Err(Error::InputShape(format!(
                "expected 3xHxW with H, W >= 16 and divisible by {f}, got {c}x{h}x{w}"
            )));
        }
        Ok(())
    }

    fn encode(&self, image: &ImageTensor) -> Result<EmbeddingBundle> {
        self.check_input(image)?;
        let t = self.trace(image.data(), None);
        let b = self.bundle(&t);
        ensure_finite(b.activations.iter().chain(b.embedding.iter()), "activations")?;
        Ok(b)
    }

    fn input_gradients_with(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
        mode: BackpropMode,
    ) -> Result<InputGradients> {
        self.check_input(first)?;
        self.check_input(second)?;
        let t1 = self.trace(first.data(), None);
        let t2 = self.trace(second.data(), None);
        let tap = self.config.embedding_tap;
        let (score, d1, d2) = similarity_backward(
            t1.embedding(tap).as_slice().expect("contiguous"),
            t2.embedding(tap).as_slice().expect("contiguous"),
        )?;
        let mut trace = RectifierTrace::default();
        let g1 = self.backward(&t1, &Array1::from(d1), mode, true, None, &mut trace);
        let g2 = self.backward(&t2, &Array1::from(d2), mode, true, None, &mut trace);
        let first = g1.input_grad.expect("requested");
        let second = g2.input_grad.expect("requested");
        ensure_finite(first.iter().chain(second.iter()), "input gradients")?;
        Ok(InputGradients {
            score,
            first,
            second,
            trace,
        })
    }

    fn activation_gradients(
        &self,
        first: &ImageTensor,
        second: &ImageTensor,
    ) -> Result<ActivationGradients> {
        self.check_input(first)?;
        self.check_input(second)?;
        let t1 = self.trace(first.data(), None);
        let t2 = self.trace(second.data(), None);
        let tap = self.config.embedding_tap;
        let (score, d1, d2) = similarity_backward(
            t1.embedding(tap).as_slice().expect("contiguous"),
            t2.embedding(tap).as_slice().expect("contiguous"),
        )?;
        let mut rect = RectifierTrace::default();
        let g1 = self.backward(&t1, &Array1::from(d1), self.mode, false, None, &mut rect);
        let g2 = self.backward(&t2, &Array1::from(d2), self.mode, false, None, &mut rect);
        ensure_finite(g1.activation_grad.iter().chain(g2.activation_grad.iter()), "activation gradients")?;
        let stage = self.config.activation_stage - 1;
        Ok(ActivationGradients {
            score,
            activations1: t1.stages[stage].clone(),
            activations2: t2.stages[stage].clone(),
            grad1: g1.activation_grad,
            grad2: g2.activation_grad,
        })
    }

    fn backprop_mode(&self) -> BackpropMode {
        self.mode
    }

    fn set_backprop_mode(&mut self, mode: BackpropMode) {
        self.mode = mode;
    }

    fn rectifier_count(&self) -> usize {
        match self.config.embedding_tap {
            EmbeddingTap::Projector => self.num_stages() + 1,
            EmbeddingTap::Pooled => self.num_stages(),
        }
    }
}
