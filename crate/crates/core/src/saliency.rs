//! Pixel attributions for image pairs: Input×Grad, Smooth-Grad, guided
//! variants and Averaged Transforms.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ensure_finite, Error, Result};
use crate::image::{ImagePair, ImageTensor};
use crate::model::{BackpropMode, SimilarityModel};
use crate::transforms::{
    apply_transform, gaussian_blur_map, interpolation_schedule, make_strength_schedule, TransformKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Raw,
    Minmax,
    AbsMinmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub name: String,
    pub options: serde_json::Value,
}

impl MethodInfo {
    pub fn new(name: impl Into<String>, options: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            options,
        }
    }
}

/// Two spatial importance maps, one per input image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPair {
    pub map1: Array2<f32>,
    pub map2: Array2<f32>,
    pub method: MethodInfo,
    pub normalization: Normalization,
}

impl ExplanationPair {
    pub fn new(map1: Array2<f32>, map2: Array2<f32>, method: MethodInfo) -> Result<Self> {
        ensure_finite(map1.iter().chain(map2.iter()), "explanation map")?;
        Ok(Self {
            map1,
            map2,
            method,
            normalization: Normalization::Raw,
        })
    }

    /// Applies [`postprocess_map`] to both maps.
    pub fn normalized(&self, mode: Normalization, blur_sigma: Option<f32>) -> Result<Self> {
        if mode == Normalization::Raw && blur_sigma.is_none() {
            return Ok(self.clone());
        }
        Ok(Self {
            map1: postprocess_map(&self.map1, mode, blur_sigma)?,
            map2: postprocess_map(&self.map2, mode, blur_sigma)?,
            method: self.method.clone(),
            normalization: mode,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            map1: self.map2.clone(),
            map2: self.map1.clone(),
            method: self.method.clone(),
            normalization: self.normalization,
        }
    }
}

fn minmax(map: &Array2<f32>) -> Array2<f32> {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return Array2::zeros(map.raw_dim());
    }
    let range = hi - lo;
    map.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Optional blur, then min-max normalization (of `|map|` for `AbsMinmax`).
/// Constant maps become all zeros.
pub fn postprocess_map(map: &Array2<f32>, mode: Normalization, blur_sigma: Option<f32>) -> Result<Array2<f32>> {
    ensure_finite(map.iter(), "map")?;
    let map = match blur_sigma {
        Some(s) if s > 0.0 => gaussian_blur_map(map, s),
        _ => map.clone(),
    };
    Ok(match mode {
        Normalization::Raw => map,
        Normalization::Minmax => minmax(&map),
        Normalization::AbsMinmax => minmax(&map.mapv(f32::abs)),
    })
}

/// Channel sum of `image ∘ grad`.
pub fn channel_product(image: &Array3<f32>, grad: &Array3<f32>) -> Array2<f32> {
    (image * grad).sum_axis(Axis(0))
}

fn mode_for(guided: bool) -> BackpropMode {
    if guided {
        BackpropMode::Guided
    } else {
        BackpropMode::Standard
    }
}

/// `map_i = Σ_c I_i ∘ ∂s/∂I_i`, signed, using the model's current backprop mode.
pub fn input_x_gradient(model: &dyn SimilarityModel, pair: &ImagePair) -> Result<ExplanationPair> {
    input_x_gradient_with(model, pair, model.backprop_mode())
}

pub fn input_x_gradient_with(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    mode: BackpropMode,
) -> Result<ExplanationPair> {
    let g = model.input_gradients_with(&pair.first, &pair.second, mode)?;
    ensure_finite(g.first.iter().chain(g.second.iter()), "input gradients")?;
    ExplanationPair::new(
        channel_product(pair.first.data(), &g.first),
        channel_product(pair.second.data(), &g.second),
        MethodInfo::new("input-x-grad", json!({"backprop_mode": mode})),
    )
}

/// Default Smooth-Grad noise: a tenth of the image's value range.
pub fn default_noise_sigma(image: &ImageTensor) -> f32 {
    let lo = image.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = image.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    0.1 * (hi - lo).max(0.0)
}

pub const DEFAULT_SMOOTH_SAMPLES: usize = 25;

fn noisy<R: rand::Rng>(image: &ImageTensor, sigma: f32, rng: &mut R) -> Result<ImageTensor> {
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0f32, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let data = image.data().mapv(|v| v + normal.sample(rng));
    ImageTensor::new(data)
}

fn check_smooth(n_samples: usize, noise_sigma: f32) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Argument(format!("noise_sigma {noise_sigma} must be finite and >= 0")));
    }
    Ok(())
}

/// Mean Input×Grad map over `n_samples` noisy replicas of both images.
pub fn smooth_grad(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    n_samples: usize,
    noise_sigma: f32,
    seed: u64,
) -> Result<ExplanationPair> {
    smooth_grad_with(model, pair, n_samples, noise_sigma, seed, model.backprop_mode())
}

pub fn smooth_grad_with(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    n_samples: usize,
    noise_sigma: f32,
    seed: u64,
    mode: BackpropMode,
) -> Result<ExplanationPair> {
    check_smooth(n_samples, noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (pair.height(), pair.width());
    let mut acc1 = Array2::<f32>::zeros((h, w));
    let mut acc2 = Array2::<f32>::zeros((h, w));
    for _ in 0..n_samples {
        let a = noisy(&pair.first, noise_sigma, &mut rng)?;
        let b = noisy(&pair.second, noise_sigma, &mut rng)?;
        let g = model.input_gradients_with(&a, &b, mode)?;
        acc1 += &channel_product(a.data(), &g.first);
        acc2 += &channel_product(b.data(), &g.second);
    }
    let inv = 1.0 / n_samples as f32;
    ExplanationPair::new(
        acc1 * inv,
        acc2 * inv,
        MethodInfo::new(
            "smooth-grad",
            json!({"n_samples": n_samples, "noise_sigma": noise_sigma, "seed": seed, "backprop_mode": mode}),
        ),
    )
}

/// How the strengths of a transform are traversed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AveragingScheme {
    /// Frames `ρ I1 + (1 - ρ) t^Z(I2)` for `ρ = 1, 1 - step, ..., 0`.
    Interpolation { rho_step: f32 },
    /// Frames `t^z(I2)` for `Z` linearly spaced strengths.
    Direct { z: usize },
}

impl Default for AveragingScheme {
    fn default() -> Self {
        AveragingScheme::Interpolation { rho_step: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothOptions {
    pub n_samples: usize,
    /// `None` picks [`default_noise_sigma`] per image.
    pub noise_sigma: Option<f32>,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SMOOTH_SAMPLES,
            noise_sigma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AveragedOptions {
    pub scheme: AveragingScheme,
    pub guided: bool,
    pub smooth: Option<SmoothOptions>,
    /// When set, the second map is computed with the roles swapped: the
    /// first image is transformed and the gradient is taken at the
    /// untouched second image.
    pub symmetric: bool,
    /// Blur of the final maps; off by default and not meant for evaluation.
    pub blur_sigma: Option<f32>,
}

struct Frame {
    image: ImageTensor,
    strength: f32,
}

fn frames_towards(anchor: &ImageTensor, other: &ImageTensor, kind: TransformKind, scheme: AveragingScheme) -> Result<Vec<Frame>> {
    match scheme {
        AveragingScheme::Interpolation { rho_step } => {
            let target = apply_transform(other, kind, kind.max_strength())?;
            let sched = interpolation_schedule(anchor, &target, rho_step)?;
            Ok(sched
                .frames
                .into_iter()
                .map(|image| Frame {
                    image,
                    strength: kind.max_strength(),
                })
                .collect())
        }
        AveragingScheme::Direct { z } => {
            let sched = make_strength_schedule(kind, z)?;
            sched
                .strengths
                .iter()
                .map(|&s| {
                    Ok(Frame {
                        image: apply_transform(other, kind, s)?,
                        strength: s,
                    })
                })
                .collect()
        }
    }
}

/// Gradients of `sim(a, b)` with optional noise averaging.
fn frame_gradients(
    model: &dyn SimilarityModel,
    a: &ImageTensor,
    b: &ImageTensor,
    mode: BackpropMode,
    smooth: Option<SmoothOptions>,
    rng: &mut ChaCha8Rng,
) -> Result<(Array3<f32>, Array3<f32>)> {
    match smooth {
        None => {
            let g = model.input_gradients_with(a, b, mode)?;
            Ok((g.first, g.second))
        }
        Some(opt) => {
            let sa = opt.noise_sigma.unwrap_or_else(|| default_noise_sigma(a));
            let sb = opt.noise_sigma.unwrap_or_else(|| default_noise_sigma(b));
            check_smooth(opt.n_samples, sa.max(sb))?;
            let mut g1 = Array3::<f32>::zeros(a.data().raw_dim());
            let mut g2 = Array3::<f32>::zeros(b.data().raw_dim());
            for _ in 0..opt.n_samples {
                let na = noisy(a, sa, rng)?;
                let nb = noisy(b, sb, rng)?;
                let g = model.input_gradients_with(&na, &nb, mode)?;
                g1 += &g.first;
                g2 += &g.second;
            }
            let inv = 1.0 / opt.n_samples as f32;
            Ok((g1 * inv, g2 * inv))
        }
    }
}

/// Mean gradients over the frames for `(anchor, frame)` pairs: returns the
/// averaged anchor gradient and the averaged frame gradient aligned back to
/// the untransformed coordinates.
fn averaged_gradients(
    model: &dyn SimilarityModel,
    anchor: &ImageTensor,
    other: &ImageTensor,
    kind: TransformKind,
    options: &AveragedOptions,
    rng: &mut ChaCha8Rng,
    swap: bool,
) -> Result<(Array3<f32>, Array3<f32>, usize)> {
    let frames = frames_towards(anchor, other, kind, options.scheme)?;
    let mode = mode_for(options.guided);
    let mut acc_anchor = Array3::<f32>::zeros(anchor.data().raw_dim());
    let mut acc_frame = Array3::<f32>::zeros(other.data().raw_dim());
    for f in &frames {
        let (ga, gf) = if swap {
            let (gf, ga) = frame_gradients(model, &f.image, anchor, mode, options.smooth, rng)?;
            (ga, gf)
        } else {
            frame_gradients(model, anchor, &f.image, mode, options.smooth, rng)?
        };
        acc_anchor += &ga;
        acc_frame += &kind.align_to_source(&gf, f.strength);
    }
    let inv = 1.0 / frames.len() as f32;
    Ok((acc_anchor * inv, acc_frame * inv, frames.len()))
}

/// Averaged Transforms: `S_{I1} = I1 ∘ mean_z ∇_{I1} S_z` and
/// `S_{I2} = I2 ∘ mean_z ∇ S_z`, with `S_z = sim(I1, frame_z)`.
pub fn averaged_transforms(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    kind: TransformKind,
    options: &AveragedOptions,
    seed: u64,
) -> Result<ExplanationPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g1, g2, frames) = averaged_gradients(model, &pair.first, &pair.second, kind, options, &mut rng, false)?;
    let g2 = if options.symmetric {
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
        rng2.set_stream(1);
        averaged_gradients(model, &pair.second, &pair.first, kind, options, &mut rng2, true)?.0
    } else {
        g2
    };
    ensure_finite(g1.iter().chain(g2.iter()), "averaged gradients")?;
    let mut map1 = channel_product(pair.first.data(), &g1);
    let mut map2 = channel_product(pair.second.data(), &g2);
    if let Some(s) = options.blur_sigma.filter(|s| *s > 0.0) {
        map1 = gaussian_blur_map(&map1, s);
        map2 = gaussian_blur_map(&map2, s);
    }
    ExplanationPair::new(
        map1,
        map2,
        MethodInfo::new(
            "avg-transforms",
            json!({"kind": kind.to_string(), "options": options, "frames": frames, "seed": seed}),
        ),
    )
}

/// Mean averaged-transforms gradients, exposed for inspection.
pub fn averaged_transform_gradients(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    kind: TransformKind,
    options: &AveragedOptions,
    seed: u64,
) -> Result<(Array3<f32>, Array3<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g1, g2, _) = averaged_gradients(model, &pair.first, &pair.second, kind, options, &mut rng, false)?;
    Ok((g1, g2))
}
