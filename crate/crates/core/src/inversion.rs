//! Feature inversion: synthesize an image whose features at a backbone
//! layer match those of a target, under total-variation and α-norm priors,
//! by momentum gradient descent with a step-decay schedule.

use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::{ContrastiveModel, SimilarityModel};

/// Smoothing constant inside the total-variation square root.
pub const TV_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrScaling {
    /// Use `lr` as given.
    #[default]
    Raw,
    /// Divide `lr` by the mean squared target feature, for models whose
    /// feature scale is far from the one the defaults were tuned on.
    InverseTargetMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// 1-based backbone stage whose output is matched.
    pub layer_id: usize,
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub init_std: f32,
    pub tv_weight: f64,
    pub alpha: f64,
    pub alpha_weight: f64,
    pub lr_scaling: LrScaling,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            layer_id: 3,
            iterations: 200,
            lr: 1e4,
            momentum: 0.9,
            lr_decay: 0.1,
            decay_every: 50,
            init_std: 0.1,
            tv_weight: 1e-8,
            alpha: 6.0,
            alpha_weight: 1e-7,
            lr_scaling: LrScaling::Raw,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Argument("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Argument("lr must be positive".into()));
        }
        if self.tv_weight < 0.0 || self.alpha_weight < 0.0 || self.init_std < 0.0 {
            return Err(Error::Argument("weights and init_std must be non-negative".into()));
        }
        if self.alpha < 1.0 {
            return Err(Error::Argument("alpha must be at least 1".into()));
        }
        if self.decay_every == 0 || !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Argument("decay_every must be >= 1 and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Base learning rate at `iteration`, decayed by repeated multiplication.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let mut lr = self.lr;
        for _ in 0..iteration / self.decay_every {
            lr *= self.lr_decay;
        }
        lr
    }
}

/// Isotropic total variation, symmetrized over the four corners of every
/// 2x2 cell: for each corner the horizontal and vertical differences
/// meeting there (summed in square over channels) enter
/// `sqrt(dx² + dy² + ε²)`, and the four corner terms are averaged. The
/// symmetrization makes the value invariant under flips.
pub fn tv_regularizer(image: &Array3<f32>) -> f64 {
    tv_with_grad(image, false).0
}

pub fn tv_gradient(image: &Array3<f32>) -> Array3<f32> {
    tv_with_grad(image, true).1.expect("requested")
}

fn tv_with_grad(image: &Array3<f32>, want_grad: bool) -> (f64, Option<Array3<f32>>) {
    let (c, h, w) = image.dim();
    let x = image.mapv(|v| v as f64);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array3::<f64>::zeros((c, h, w)));
    if h < 2 || w < 2 {
        return (0.0, grad.map(|g| g.mapv(|v| v as f32)));
    }
    // corner -> (row of the horizontal difference, column of the vertical one)
    const CORNERS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for y in 0..h - 1 {
        for xx in 0..w - 1 {
            for &(ry, cx) in &CORNERS {
                let mut sq = TV_EPSILON * TV_EPSILON;
                for ch in 0..c {
                    let dx = x[[ch, y + ry, xx + 1]] - x[[ch, y + ry, xx]];
                    let dy = x[[ch, y + 1, xx + cx]] - x[[ch, y, xx + cx]];
                    sq += dx * dx + dy * dy;
                }
                let r = sq.sqrt();
                total += 0.25 * r;
                if let Some(g) = grad.as_mut() {
                    let k = 0.25 / r;
                    for ch in 0..c {
                        let dx = x[[ch, y + ry, xx + 1]] - x[[ch, y + ry, xx]];
                        let dy = x[[ch, y + 1, xx + cx]] - x[[ch, y, xx + cx]];
                        g[[ch, y + ry, xx + 1]] += k * dx;
                        g[[ch, y + ry, xx]] -= k * dx;
                        g[[ch, y + 1, xx + cx]] += k * dy;
                        g[[ch, y, xx + cx]] -= k * dy;
                    }
                }
            }
        }
    }
    (total, grad.map(|g| g.mapv(|v| v as f32)))
}

/// `Σ |x - mean_c|^α` with the mean taken per channel.
pub fn alpha_norm(image: &Array3<f32>, alpha: f64) -> f64 {
    let mut total = 0.0;
    for plane in image.axis_iter(Axis(0)) {
        let n = plane.len() as f64;
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
        total += plane.iter().map(|&v| (v as f64 - mean).abs().powf(alpha)).sum::<f64>();
    }
    total
}

pub fn alpha_norm_gradient(image: &Array3<f32>, alpha: f64) -> Array3<f32> {
    let mut out = Array3::<f32>::zeros(image.raw_dim());
    for (plane, mut g) in image.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let n = plane.len() as f64;
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
        let d: Vec<f64> = plane
            .iter()
            .map(|&v| {
                let u = v as f64 - mean;
                alpha * u.abs().powf(alpha - 1.0) * u.signum()
            })
            .collect();
        let correction = d.iter().sum::<f64>() / n;
        for (gv, dv) in g.iter_mut().zip(&d) {
            *gv = (dv - correction) as f32;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    #[serde(skip)]
    pub image: Option<ImageTensor>,
    /// Total objective before each update.
    pub loss_trace: Vec<f64>,
    /// Feature mean-squared error before each update.
    pub feature_trace: Vec<f64>,
    pub final_feature_mse: f64,
    pub final_loss: f64,
    pub effective_lr: f64,
}

impl InversionResult {
    pub fn initial_feature_mse(&self) -> f64 {
        self.feature_trace.first().copied().unwrap_or(f64::NAN)
    }

    pub fn synthesized(&self) -> &ImageTensor {
        self.image.as_ref().expect("inversion produces an image")
    }
}

struct Objective {
    total: f64,
    feature: f64,
    grad: Array3<f32>,
}

fn objective(
    model: &ContrastiveModel,
    x: &Array3<f32>,
    target: &Array3<f32>,
    config: &InversionConfig,
) -> Result<Objective> {
    let n = target.len() as f64;
    let mut feature = 0.0;
    let (_, mut grad) = model.stage_features_backward(x, config.layer_id, |f| {
        let mut d = f - target;
        feature = d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        d.mapv_inplace(|v| (2.0 * v as f64 / n) as f32);
        d
    })?;
    let mut total = feature;
    if config.tv_weight > 0.0 {
        total += config.tv_weight * tv_regularizer(x);
        grad.scaled_add(config.tv_weight as f32, &tv_gradient(x));
    }
    if config.alpha_weight > 0.0 {
        total += config.alpha_weight * alpha_norm(x, config.alpha);
        grad.scaled_add(config.alpha_weight as f32, &alpha_norm_gradient(x, config.alpha));
    }
    Ok(Objective { total, feature, grad })
}

/// Runs the inversion from `normal(0, init_std)`, or from `init` if given.
pub fn invert_features(
    model: &ContrastiveModel,
    target_image: &ImageTensor,
    config: &InversionConfig,
    init: Option<&ImageTensor>,
) -> Result<InversionResult> {
    config.validate()?;
    model.check_input(target_image)?;
    let target = model.stage_features(target_image, config.layer_id)?;
    let mut x = match init {
        Some(img) => {
            if img.shape() != target_image.shape() {
                return Err(Error::Argument("initial image shape differs from target".into()));
            }
            img.data().clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let normal = Normal::new(0.0f32, config.init_std.max(f32::MIN_POSITIVE))
                .map_err(|e| Error::Argument(e.to_string()))?;
            Array3::from_shape_fn(target_image.data().raw_dim(), |_| {
                if config.init_std == 0.0 {
                    0.0
                } else {
                    normal.sample(&mut rng)
                }
            })
        }
    };
    let scale = match config.lr_scaling {
        LrScaling::Raw => 1.0,
        LrScaling::InverseTargetMagnitude => {
            let m = target.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / target.len() as f64;
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        }
    };
    let mut velocity = Array3::<f32>::zeros(x.raw_dim());
    let mut loss_trace = Vec::with_capacity(config.iterations + 1);
    let mut feature_trace = Vec::with_capacity(config.iterations + 1);
    for it in 0..config.iterations {
        let obj = objective(model, &x, &target, config)?;
        loss_trace.push(obj.total);
        feature_trace.push(obj.feature);
        if !obj.total.is_finite() || obj.grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::InversionDiverged {
                iteration: it,
                trace: loss_trace,
            });
        }
        let lr = (config.learning_rate_at(it) * scale) as f32;
        let mu = config.momentum as f32;
        velocity.zip_mut_with(&obj.grad, |v, &g| *v = mu * *v + g);
        x.zip_mut_with(&velocity, |p, &v| *p = (*p - lr * v).clamp(0.0, 1.0));
    }
    let last = objective(model, &x, &target, config)?;
    if !last.total.is_finite() {
        return Err(Error::InversionDiverged {
            iteration: config.iterations,
            trace: loss_trace,
        });
    }
    loss_trace.push(last.total);
    feature_trace.push(last.feature);
    Ok(InversionResult {
        image: Some(ImageTensor::new(x)?),
        loss_trace,
        feature_trace,
        final_feature_mse: last.feature,
        final_loss: last.total,
        effective_lr: config.lr * scale,
    })
}
