//! Occlusion importance for image pairs: Conditional Occlusion (one image
//! perturbed by a sliding window while the other stays intact) and Pairwise
//! Occlusion (random rectangles on both images at once).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::image::{ImagePair, ImageTensor};
use crate::model::{similarity, EmbeddingBundle, SimilarityModel};
use crate::saliency::{ExplanationPair, MethodInfo, Normalization};

/// Per-channel mean of the ImageNet training set, the usual "gray" occluder.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Fill {
    Zero,
    /// Constant per-channel colour, typically the dataset mean.
    MeanPixel([f32; 3]),
    /// Per-channel mean of the image being occluded.
    ImageMean,
}

impl Default for Fill {
    fn default() -> Self {
        Fill::MeanPixel(IMAGENET_MEAN)
    }
}

impl Fill {
    pub fn colour(&self, image: &ImageTensor) -> [f32; 3] {
        match *self {
            Fill::Zero => [0.0; 3],
            Fill::MeanPixel(c) => c,
            Fill::ImageMean => image.channel_mean(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxOver {
    #[default]
    Drops,
    Scores,
}

/// Which features decide the image a pairwise weight is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    #[default]
    Pooled,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub mask_size: usize,
    pub stride: usize,
    pub fill: Fill,
    pub n_masks: usize,
    pub scale_range: (f32, f32),
    /// Height over width.
    pub aspect_range: (f32, f32),
    pub temperature: f32,
    pub softmax_over: SoftmaxOver,
    pub norm_source: NormSource,
    pub seed: u64,
}

impl Default for OcclusionConfig {
    /// Settings for 224-pixel inputs.
    fn default() -> Self {
        Self {
            mask_size: 64,
            stride: 8,
            fill: Fill::default(),
            n_masks: 100,
            scale_range: (0.10, 0.30),
            aspect_range: (0.5, 2.0),
            temperature: 1.0,
            softmax_over: SoftmaxOver::Drops,
            norm_source: NormSource::Pooled,
            seed: 0,
        }
    }
}

impl OcclusionConfig {
    /// Defaults with the window geometry scaled from 224 pixels to `side`.
    pub fn scaled_for(side: usize) -> Self {
        let scale = side as f32 / 224.0;
        Self {
            mask_size: ((64.0 * scale).round() as usize).clamp(1, side.max(1)),
            stride: ((8.0 * scale).round() as usize).max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Argument(format!("scale_range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
        }
        let (alo, ahi) = self.aspect_range;
        if !(alo > 0.0 && alo <= ahi) {
            return Err(Error::Argument(format!("aspect_range ({alo}, {ahi}) invalid")));
        }
        if self.stride == 0 || self.mask_size == 0 {
            return Err(Error::Argument("stride and mask_size must be at least 1".into()));
        }
        if self.mask_size > height.min(width) {
            return Err(Error::Argument(format!(
                "mask size {} exceeds image side {}",
                self.mask_size,
                height.min(width)
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Argument("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSample {
    pub rect1: Rect,
    pub rect2: Rect,
}

/// Image with `rect` painted in the fill colour.
pub fn occlude(image: &ImageTensor, rect: Rect, fill: Fill) -> ImageTensor {
    let colour = fill.colour(image);
    let mut data = image.data().clone();
    for (c, &v) in colour.iter().enumerate() {
        data.slice_mut(ndarray::s![c, rect.top..rect.top + rect.height, rect.left..rect.left + rect.width])
            .fill(v);
    }
    let mut out = ImageTensor::new(data).expect("fill colours are finite");
    if let Some(src) = image.source() {
        out = out.with_source(src.to_string());
    }
    out
}

/// Top-left offsets of a sliding window along one axis.
pub fn window_offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if size > len || stride == 0 {
        return Vec::new();
    }
    (0..=(len - size) / stride).map(|i| i * stride).collect()
}

pub fn sliding_windows(height: usize, width: usize, size: usize, stride: usize) -> Vec<Rect> {
    let cols = window_offsets(width, size, stride);
    window_offsets(height, size, stride)
        .into_iter()
        .flat_map(|top| {
            cols.iter().map(move |&left| Rect {
                top,
                left,
                height: size,
                width: size,
            })
        })
        .collect()
}

fn accumulate(acc: &mut Array2<f64>, cover: &mut Array2<f64>, rect: Rect, value: f64) {
    let sl = ndarray::s![rect.top..rect.top + rect.height, rect.left..rect.left + rect.width];
    acc.slice_mut(sl).mapv_inplace(|v| v + value);
    cover.slice_mut(sl).mapv_inplace(|v| v + 1.0);
}

fn coverage_mean(acc: &Array2<f64>, cover: &Array2<f64>) -> Array2<f32> {
    ndarray::Zip::from(acc)
        .and(cover)
        .map_collect(|&a, &c| if c > 0.0 { (a / c) as f32 } else { 0.0 })
}

/// Per-window record of a conditional occlusion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDetail {
    pub base_score: f32,
    pub windows: Vec<Rect>,
    /// `s - sim(occluded I1, I2)` per window.
    pub drops1: Vec<f32>,
    /// `s - sim(I1, occluded I2)` per window.
    pub drops2: Vec<f32>,
}

fn embed(model: &dyn SimilarityModel, image: &ImageTensor) -> Result<EmbeddingBundle> {
    model.encode(image)
}

fn cos(a: &EmbeddingBundle, b: &EmbeddingBundle) -> Result<f32> {
    similarity(
        a.embedding.as_slice().expect("contiguous"),
        b.embedding.as_slice().expect("contiguous"),
    )
}

/// Sliding-window occlusion of each image with the other intact; each
/// pixel receives the mean drop of the windows covering it (raw scale).
pub fn conditional_occlusion(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    config: &OcclusionConfig,
) -> Result<ExplanationPair> {
    Ok(conditional_occlusion_detailed(model, pair, config)?.0)
}

pub fn conditional_occlusion_detailed(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    config: &OcclusionConfig,
) -> Result<(ExplanationPair, ConditionalDetail)> {
    let (h, w) = (pair.height(), pair.width());
    if config.mask_size > h.min(w) {
        return Err(Error::Argument(format!(
            "window {} larger than image {h}x{w}",
            config.mask_size
        )));
    }
    if config.stride == 0 || config.mask_size == 0 {
        return Err(Error::Argument("stride and mask_size must be at least 1".into()));
    }
    let e1 = embed(model, &pair.first)?;
    let e2 = embed(model, &pair.second)?;
    let base = cos(&e1, &e2)?;
    let windows = sliding_windows(h, w, config.mask_size, config.stride);
    let mut drops1 = Vec::with_capacity(windows.len());
    let mut drops2 = Vec::with_capacity(windows.len());
    let mut maps = Vec::with_capacity(2);
    for (img, fixed, drops) in [(&pair.first, &e2, &mut drops1), (&pair.second, &e1, &mut drops2)] {
        let mut acc = Array2::<f64>::zeros((h, w));
        let mut cover = Array2::<f64>::zeros((h, w));
        for &rect in &windows {
            let occluded = embed(model, &occlude(img, rect, config.fill))?;
            let drop = base - cos(&occluded, fixed)?;
            drops.push(drop);
            accumulate(&mut acc, &mut cover, rect, drop as f64);
        }
        maps.push(coverage_mean(&acc, &cover));
    }
    let map2 = maps.pop().expect("two maps");
    let map1 = maps.pop().expect("two maps");
    let method = MethodInfo::new("cond-occlusion", json!({"config": config, "windows": windows.len()}));
    Ok((
        ExplanationPair::new(map1, map2, method)?,
        ConditionalDetail {
            base_score: base,
            windows,
            drops1,
            drops2,
        },
    ))
}

/// Random rectangle with area fraction uniform in `scale_range`, aspect
/// ratio (height / width) uniform in `aspect_range` and uniform position.
pub fn sample_occlusion_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    scale_range: (f32, f32),
    aspect_range: (f32, f32),
    rng: &mut R,
) -> Result<Rect> {
    let (lo, hi) = scale_range;
    let (alo, ahi) = aspect_range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0 && alo > 0.0 && alo <= ahi) || height == 0 || width == 0 {
        return Err(Error::Argument(format!(
            "invalid mask ranges scale ({lo}, {hi}) aspect ({alo}, {ahi})"
        )));
    }
    let total = (height * width) as f64;
    for _ in 0..100 {
        let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo } as f64;
        let aspect = if ahi > alo { rng.random_range(alo..=ahi) } else { alo } as f64;
        let area = frac * total;
        let h = (area * aspect).sqrt().round() as usize;
        let w = (area / aspect).sqrt().round() as usize;
        if h >= 1 && w >= 1 && h <= height && w <= width {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            return Ok(Rect {
                top,
                left,
                height: h,
                width: w,
            });
        }
    }
    Err(Error::Argument(format!(
        "could not place a mask with scale ({lo}, {hi}) and aspect ({alo}, {ahi}) in {height}x{width}"
    )))
}

/// The image whose perturbed features have the smaller norm receives the
/// weight; ties go to the first image.
pub fn assign_to_first(norm1: f32, norm2: f32) -> bool {
    norm1 <= norm2
}

/// Numerically stable softmax in double precision.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDetail {
    pub base_score: f32,
    pub samples: Vec<MaskSample>,
    pub scores: Vec<f32>,
    pub weights: Vec<f64>,
    pub norms: Vec<(f32, f32)>,
    pub assigned_to_first: Vec<bool>,
    /// Number of perturbed-pair forward evaluations.
    pub forward_passes: usize,
}

fn feature_norm(b: &EmbeddingBundle, source: NormSource) -> f32 {
    let sq: f64 = match source {
        NormSource::Pooled => b.pooled_features.iter().map(|&v| (v as f64).powi(2)).sum(),
        NormSource::Spatial => b.activations.iter().map(|&v| (v as f64).powi(2)).sum(),
    };
    sq.sqrt() as f32
}

/// Pairwise Occlusion: both images are occluded simultaneously, importance
/// weights are a softmax over the similarity drops, and each weight goes
/// to the rectangle of the image with the weaker perturbed features. Maps
/// are coverage-normalized and min-max normalized.
pub fn pairwise_occlusion(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    config: &OcclusionConfig,
) -> Result<ExplanationPair> {
    Ok(pairwise_occlusion_detailed(model, pair, config)?.0)
}

pub fn pairwise_occlusion_detailed(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    config: &OcclusionConfig,
) -> Result<(ExplanationPair, PairwiseDetail)> {
    if config.n_masks == 0 {
        return Err(Error::Argument("n_masks must be at least 1".into()));
    }
    if !(config.temperature > 0.0) {
        return Err(Error::Argument("temperature must be positive".into()));
    }
    let (h, w) = (pair.height(), pair.width());
    let base = model.score(&pair.first, &pair.second)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::with_capacity(config.n_masks);
    let mut scores = Vec::with_capacity(config.n_masks);
    let mut norms = Vec::with_capacity(config.n_masks);
    for _ in 0..config.n_masks {
        let rect1 = sample_occlusion_mask(h, w, config.scale_range, config.aspect_range, &mut rng)?;
        let rect2 = sample_occlusion_mask(h, w, config.scale_range, config.aspect_range, &mut rng)?;
        let b1 = embed(model, &occlude(&pair.first, rect1, config.fill))?;
        let b2 = embed(model, &occlude(&pair.second, rect2, config.fill))?;
        scores.push(cos(&b1, &b2)?);
        norms.push((feature_norm(&b1, config.norm_source), feature_norm(&b2, config.norm_source)));
        samples.push(MaskSample { rect1, rect2 });
    }
    let t = config.temperature as f64;
    let logits: Vec<f64> = scores
        .iter()
        .map(|&sz| match config.softmax_over {
            SoftmaxOver::Drops => (base as f64 - sz as f64) / t,
            SoftmaxOver::Scores => sz as f64 / t,
        })
        .collect();
    let weights = softmax(&logits);

    let mut acc1 = Array2::<f64>::zeros((h, w));
    let mut acc2 = Array2::<f64>::zeros((h, w));
    let mut cover1 = Array2::<f64>::zeros((h, w));
    let mut cover2 = Array2::<f64>::zeros((h, w));
    let mut assigned = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let first = assign_to_first(norms[i].0, norms[i].1);
        assigned.push(first);
        let (v1, v2) = if first { (weights[i], 0.0) } else { (0.0, weights[i]) };
        accumulate(&mut acc1, &mut cover1, s.rect1, v1);
        accumulate(&mut acc2, &mut cover2, s.rect2, v2);
    }
    let map1 = coverage_mean(&acc1, &cover1);
    let map2 = coverage_mean(&acc2, &cover2);
    let method = MethodInfo::new("pair-occlusion", json!({"config": config}));
    let explanation = ExplanationPair::new(map1, map2, method)?.normalized(Normalization::Minmax, None)?;
    Ok((
        explanation,
        PairwiseDetail {
            base_score: base,
            forward_passes: samples.len(),
            samples,
            scores,
            weights,
            norms,
            assigned_to_first: assigned,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(sliding_windows(224, 224, 64, 8).len(), 441);
        assert_eq!(window_offsets(32, 8, 4), vec![0, 4, 8, 12, 16, 20, 24]);
        assert!(window_offsets(8, 9, 1).is_empty());
    }

    #[test]
    fn default_protocol_constants() {
        let c = OcclusionConfig::default();
        assert_eq!((c.mask_size, c.stride, c.n_masks), (64, 8, 100));
        assert_eq!(c.scale_range, (0.10, 0.30));
        assert!(c.validate(224, 224).is_ok());
        assert!(c.validate(32, 32).is_err());
        assert!(OcclusionConfig::scaled_for(32).validate(32, 32).is_ok());
    }

    #[test]
    fn mask_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let r = sample_occlusion_mask(32, 32, (0.1, 0.3), (1.0, 1.0), &mut rng).unwrap();
            assert!(r.height.abs_diff(r.width) <= 1);
            assert!(r.top + r.height <= 32 && r.left + r.width <= 32);
        }
        assert!(sample_occlusion_mask(32, 32, (0.5, 0.9), (50.0, 60.0), &mut rng).is_err());
    }

    #[test]
    fn softmax_and_assignment() {
        let w = softmax(&[0.3; 7]);
        assert!(w.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-12));
        assert!(assign_to_first(3.0, 5.0));
        assert!(!assign_to_first(5.0, 3.0));
    }
}
