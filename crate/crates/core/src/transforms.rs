//! Augmentation families with explicit strength schedules.
//!
//! Every transform maps an image to an image of the same shape with values
//! clamped to `[0, 1]`. Strengths are magnitudes: larger means a stronger
//! distortion. Documented ranges per kind:
//!
//! | kind            | strength                       | range          |
//! |-----------------|--------------------------------|----------------|
//! | `color_jitter`  | jitter factor `f`              | `[0, 0.8]`     |
//! | `gaussian_blur` | sigma                          | `[0.1, 2.0]`   |
//! | `grayscale`     | blend towards luma             | `[0, 1]`       |
//! | `solarization`  | `1 - threshold`                | `[0, 0.5]`     |
//! | `rotation(θ)`   | angle in degrees               | `[0, θ]`       |
//! | `horizontal_flip` | discrete                     | `{1}`          |
//!
//! At jitter factor `f`, brightness, contrast and saturation are each scaled
//! by `1 - f` and hue is shifted by `f / 4` (so hue spans `[0, 0.2]`).

use std::fmt;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AugmentationRecord, ImagePair, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    ColorJitter,
    GaussianBlur,
    Grayscale,
    Solarization,
    Rotation { degrees: f32 },
    HorizontalFlip,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformKind::Identity => write!(f, "identity"),
            TransformKind::ColorJitter => write!(f, "color_jitter"),
            TransformKind::GaussianBlur => write!(f, "gaussian_blur"),
            TransformKind::Grayscale => write!(f, "grayscale"),
            TransformKind::Solarization => write!(f, "solarization"),
            TransformKind::Rotation { degrees } => write!(f, "rotation({degrees})"),
            TransformKind::HorizontalFlip => write!(f, "horizontal_flip"),
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "identity" => TransformKind::Identity,
            "color_jitter" => TransformKind::ColorJitter,
            "gaussian_blur" => TransformKind::GaussianBlur,
            "grayscale" => TransformKind::Grayscale,
            "solarization" => TransformKind::Solarization,
            "horizontal_flip" => TransformKind::HorizontalFlip,
            _ => {
                let inner = s
                    .strip_prefix("rotation(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Unsupported(format!("unsupported transform kind '{s}'")))?;
                let degrees: f32 = inner
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad rotation angle '{inner}'")))?;
                TransformKind::rotation(degrees)?
            }
        })
    }
}

impl TransformKind {
    pub fn rotation(degrees: f32) -> Result<Self> {
        if !(degrees.is_finite() && degrees > 0.0 && degrees <= 360.0) {
            return Err(Error::Argument(format!("rotation angle {degrees} outside (0, 360]")));
        }
        Ok(TransformKind::Rotation { degrees })
    }

    /// Inclusive strength range.
    pub fn strength_range(&self) -> (f32, f32) {
        match *self {
            TransformKind::Identity => (0.0, 0.0),
            TransformKind::ColorJitter => (0.0, 0.8),
            TransformKind::GaussianBlur => (0.1, 2.0),
            TransformKind::Grayscale => (0.0, 1.0),
            TransformKind::Solarization => (0.0, 0.5),
            TransformKind::Rotation { degrees } => (0.0, degrees),
            TransformKind::HorizontalFlip => (1.0, 1.0),
        }
    }

    pub fn max_strength(&self) -> f32 {
        self.strength_range().1
    }

    fn is_discrete(&self) -> bool {
        matches!(self, TransformKind::HorizontalFlip | TransformKind::Identity)
    }

    /// Maps a gradient computed on a transformed image back onto the
    /// coordinates of the untransformed image.
    pub fn align_to_source(&self, grad: &Array3<f32>, strength: f32) -> Array3<f32> {
        match *self {
            TransformKind::Rotation { .. } => rotate(grad, -strength, [0.0; 3]),
            TransformKind::HorizontalFlip => flip_horizontal(grad),
            _ => grad.clone(),
        }
    }
}

/// A transform decomposed into `Z` increasing strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSchedule {
    pub kind: TransformKind,
    pub strengths: Vec<f32>,
}

impl TransformSchedule {
    pub fn len(&self) -> usize {
        self.strengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strengths.is_empty()
    }
}

/// Linear schedule `lo + (hi - lo) * z / Z` for `z = 1..=Z`.
pub fn make_strength_schedule(kind: TransformKind, z: usize) -> Result<TransformSchedule> {
    if z == 0 {
        return Err(Error::Argument("schedule needs at least one strength".into()));
    }
    if kind.is_discrete() && z != 1 {
        return Err(Error::Argument(format!("{kind} is discrete; only Z = 1 is supported")));
    }
    let (lo, hi) = kind.strength_range();
    let strengths = (1..=z)
        .map(|i| lo + (hi - lo) * i as f32 / z as f32)
        .collect();
    Ok(TransformSchedule { kind, strengths })
}

pub fn apply_transform(image: &ImageTensor, kind: TransformKind, strength: f32) -> Result<ImageTensor> {
    let (lo, hi) = kind.strength_range();
    let tol = 1e-6 * hi.abs().max(1.0);
    if !(strength.is_finite() && strength >= lo - tol && strength <= hi + tol) {
        return Err(Error::Argument(format!(
            "strength {strength} outside [{lo}, {hi}] for {kind}"
        )));
    }
    let x = image.data();
    let out = match kind {
        TransformKind::Identity => x.clone(),
        TransformKind::ColorJitter => {
            let f = 1.0 - strength;
            let y = adjust_brightness(x, f);
            let y = adjust_contrast(&y, f);
            let y = adjust_saturation(&y, f);
            adjust_hue(&y, strength / 4.0)
        }
        TransformKind::GaussianBlur => gaussian_blur(x, strength, None),
        TransformKind::Grayscale => to_grayscale(x, strength),
        TransformKind::Solarization => solarize(x, 1.0 - strength),
        TransformKind::Rotation { .. } => rotate(x, strength, image.channel_mean()),
        TransformKind::HorizontalFlip => flip_horizontal(x),
    };
    let mut result = ImageTensor::new(clamp_unit(out))?;
    if let Some(src) = image.source() {
        result = result.with_source(src.to_string());
    }
    Ok(result)
}

fn clamp_unit(mut x: Array3<f32>) -> Array3<f32> {
    x.mapv_inplace(|v| v.clamp(0.0, 1.0));
    x
}

fn luma(x: &Array3<f32>) -> Array2<f32> {
    let r = x.index_axis(Axis(0), 0);
    let g = x.index_axis(Axis(0), 1);
    let b = x.index_axis(Axis(0), 2);
    &r * 0.299 + &g * 0.587 + &b * 0.114
}

pub fn adjust_brightness(x: &Array3<f32>, factor: f32) -> Array3<f32> {
    clamp_unit(x * factor)
}

pub fn adjust_contrast(x: &Array3<f32>, factor: f32) -> Array3<f32> {
    let mean = luma(x).mean().unwrap_or(0.0);
    clamp_unit(x.mapv(|v| (v - mean) * factor + mean))
}

pub fn adjust_saturation(x: &Array3<f32>, factor: f32) -> Array3<f32> {
    let gray = luma(x);
    let mut out = x.clone();
    for mut plane in out.axis_iter_mut(Axis(0)) {
        plane.zip_mut_with(&gray, |v, &g| *v = (g + (*v - g) * factor).clamp(0.0, 1.0));
    }
    out
}

/// Rotates hue by `shift` turns (in `[-0.5, 0.5]`).
pub fn adjust_hue(x: &Array3<f32>, shift: f32) -> Array3<f32> {
    if shift == 0.0 {
        return x.clone();
    }
    let (_, h, w) = x.dim();
    let mut out = x.clone();
    for yy in 0..h {
        for xx in 0..w {
            let (r, g, b) = (x[[0, yy, xx]], x[[1, yy, xx]], x[[2, yy, xx]]);
            let (hue, s, v) = rgb_to_hsv(r, g, b);
            let (r, g, b) = hsv_to_rgb((hue + shift).rem_euclid(1.0), s, v);
            out[[0, yy, xx]] = r;
            out[[1, yy, xx]] = g;
            out[[2, yy, xx]] = b;
        }
    }
    out
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn to_grayscale(x: &Array3<f32>, amount: f32) -> Array3<f32> {
    let gray = luma(x);
    let mut out = x.clone();
    for mut plane in out.axis_iter_mut(Axis(0)) {
        if amount >= 1.0 {
            plane.assign(&gray);
        } else {
            plane.zip_mut_with(&gray, |v, &g| *v = (1.0 - amount) * *v + amount * g);
        }
    }
    out
}

/// Inverts pixels strictly above `threshold`.
pub fn solarize(x: &Array3<f32>, threshold: f32) -> Array3<f32> {
    x.mapv(|v| if v > threshold { 1.0 - v } else { v })
}

pub fn flip_horizontal(x: &Array3<f32>) -> Array3<f32> {
    let mut out = x.clone();
    out.invert_axis(Axis(2));
    out.as_standard_layout().to_owned()
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn gaussian_kernel(sigma: f32, radius: usize) -> Vec<f32> {
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / s2).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with reflective padding. The default radius is
/// `ceil(3 sigma)`.
pub fn gaussian_blur(x: &Array3<f32>, sigma: f32, radius: Option<usize>) -> Array3<f32> {
    if sigma <= 0.0 {
        return x.clone();
    }
    let radius = radius.unwrap_or_else(|| (3.0 * sigma).ceil() as usize).max(1);
    let k = gaussian_kernel(sigma, radius);
    let (c, h, w) = x.dim();
    let mut tmp = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = reflect(xx as isize + i as isize - radius as isize, w);
                    acc += kv * x[[ch, yy, sx]];
                }
                tmp[[ch, yy, xx]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = reflect(yy as isize + i as isize - radius as isize, h);
                    acc += kv * tmp[[ch, sy, xx]];
                }
                out[[ch, yy, xx]] = acc;
            }
        }
    }
    out
}

/// Blur of a single-channel map.
pub fn gaussian_blur_map(map: &Array2<f32>, sigma: f32) -> Array2<f32> {
    let x = map.clone().insert_axis(Axis(0));
    gaussian_blur(&x, sigma, None).index_axis_move(Axis(0), 0)
}

fn bilinear(plane: ndarray::ArrayView2<f32>, sy: f32, sx: f32) -> f32 {
    let (h, w) = plane.dim();
    let y0 = sy.floor().clamp(0.0, (h - 1) as f32) as usize;
    let x0 = sx.floor().clamp(0.0, (w - 1) as f32) as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = (sy - y0 as f32).clamp(0.0, 1.0);
    let fx = (sx - x0 as f32).clamp(0.0, 1.0);
    let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
    let bottom = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Counter-clockwise rotation about the image centre with bilinear
/// sampling; pixels whose source falls outside the image take `fill`.
pub fn rotate(x: &Array3<f32>, degrees: f32, fill: [f32; 3]) -> Array3<f32> {
    if degrees == 0.0 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    let theta = (degrees as f64).to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array3::zeros((c, h, w));
    let eps = 1e-4;
    for yy in 0..h {
        for xx in 0..w {
            let dy = yy as f64 - cy;
            let dx = xx as f64 - cx;
            // inverse map: rotate the output coordinate back by -theta
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let inside = sx >= -eps
                && sy >= -eps
                && sx <= w as f64 - 1.0 + eps
                && sy <= h as f64 - 1.0 + eps;
            for ch in 0..c {
                out[[ch, yy, xx]] = if inside {
                    bilinear(x.index_axis(Axis(0), ch), sy as f32, sx as f32)
                } else {
                    fill[ch.min(2)]
                };
            }
        }
    }
    out
}

/// Bilinear resize of a crop `(top, left, height, width)` to `(out_h, out_w)`.
pub fn resized_crop(
    x: &Array3<f32>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Array3<f32> {
    let c = x.dim().0;
    let crop = x.slice(ndarray::s![.., top..top + height, left..left + width]);
    let sy = height as f32 / out_h as f32;
    let sx = width as f32 / out_w as f32;
    Array3::from_shape_fn((c, out_h, out_w), |(ch, yy, xx)| {
        let src_y = ((yy as f32 + 0.5) * sy - 0.5).clamp(0.0, (height - 1) as f32);
        let src_x = ((xx as f32 + 0.5) * sx - 0.5).clamp(0.0, (width - 1) as f32);
        bilinear(crop.index_axis(Axis(0), ch), src_y, src_x)
    })
}

/// Frames `o = rho * I1 + (1 - rho) * I_Z` for `rho = 1, 1 - step, ..., 0`.
#[derive(Debug, Clone)]
pub struct InterpolationSchedule {
    pub frames: Vec<ImageTensor>,
    pub rhos: Vec<f32>,
    pub rho_step: f32,
}

pub fn interpolation_rhos(rho_step: f32) -> Result<Vec<f32>> {
    if !(rho_step > 0.0 && rho_step <= 1.0) {
        return Err(Error::Argument(format!("rho_step {rho_step} outside (0, 1]")));
    }
    let step = rho_step as f64;
    let n = (1.0 / step - 1e-6).ceil() as usize;
    Ok((0..=n)
        .map(|k| if k == n { 0.0 } else { (1.0 - k as f64 * step) as f32 })
        .collect())
}

pub fn interpolation_schedule(
    first: &ImageTensor,
    target: &ImageTensor,
    rho_step: f32,
) -> Result<InterpolationSchedule> {
    if first.shape() != target.shape() {
        return Err(Error::Argument(format!(
            "interpolation endpoints differ in shape: {:?} vs {:?}",
            first.shape(),
            target.shape()
        )));
    }
    let rhos = interpolation_rhos(rho_step)?;
    let frames = rhos
        .iter()
        .map(|&rho| {
            if rho == 1.0 {
                first.clone()
            } else if rho == 0.0 {
                target.clone()
            } else {
                let mut data = first.data() * rho;
                data.scaled_add(1.0 - rho, target.data());
                ImageTensor::new(data).expect("blend of finite images")
            }
        })
        .collect();
    Ok(InterpolationSchedule {
        frames,
        rhos,
        rho_step,
    })
}

/// One stochastic step of an augmentation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentOp {
    RandomResizedCrop { scale: (f32, f32), ratio: (f32, f32) },
    HorizontalFlip { p: f32 },
    ColorJitter { p: f32, brightness: f32, contrast: f32, saturation: f32, hue: f32 },
    Grayscale { p: f32 },
    GaussianBlur { p: f32, sigma: (f32, f32) },
    Solarization { p: f32, threshold: f32 },
    Rotation { p: f32, max_degrees: f32 },
}

/// Ordered list of augmentation steps; the empty policy is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AugmentPolicy {
    pub ops: Vec<AugmentOp>,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self { ops: Vec::new() }
    }

    /// Two-view contrastive augmentation: crop-resize, flip, colour jitter,
    /// grayscale and blur.
    pub fn contrastive_default() -> Self {
        Self {
            ops: vec![
                AugmentOp::RandomResizedCrop {
                    scale: (0.4, 1.0),
                    ratio: (0.75, 4.0 / 3.0),
                },
                AugmentOp::HorizontalFlip { p: 0.5 },
                AugmentOp::ColorJitter {
                    p: 0.8,
                    brightness: 0.4,
                    contrast: 0.4,
                    saturation: 0.4,
                    hue: 0.1,
                },
                AugmentOp::Grayscale { p: 0.2 },
                AugmentOp::GaussianBlur {
                    p: 0.5,
                    sigma: (0.1, 2.0),
                },
            ],
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Applies one random draw of the policy, recording what was applied.
pub fn augment_view<R: Rng>(image: &ImageTensor, policy: &AugmentPolicy, rng: &mut R) -> (ImageTensor, Vec<String>) {
    let mut x = image.data().clone();
    let mut log = Vec::new();
    let (_, h, w) = x.dim();
    for op in &policy.ops {
        match *op {
            AugmentOp::RandomResizedCrop { scale, ratio } => {
                let area = (h * w) as f32;
                let mut chosen = (0, 0, h, w);
                for _ in 0..10 {
                    let target = area * uniform(rng, scale);
                    let log_r = uniform(rng, (ratio.0.ln(), ratio.1.ln()));
                    let r = log_r.exp();
                    let cw = (target * r).sqrt().round() as usize;
                    let ch = (target / r).sqrt().round() as usize;
                    if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
                        let top = rng.random_range(0..=h - ch);
                        let left = rng.random_range(0..=w - cw);
                        chosen = (top, left, ch, cw);
                        break;
                    }
                }
                let (top, left, ch, cw) = chosen;
                x = resized_crop(&x, top, left, ch, cw, h, w);
                log.push(format!("crop(top={top},left={left},h={ch},w={cw})"));
            }
            AugmentOp::HorizontalFlip { p } => {
                if rng.random::<f32>() < p {
                    x = flip_horizontal(&x);
                    log.push("hflip".into());
                }
            }
            AugmentOp::ColorJitter {
                p,
                brightness,
                contrast,
                saturation,
                hue,
            } => {
                if rng.random::<f32>() < p {
                    let b = uniform(rng, ((1.0 - brightness).max(0.0), 1.0 + brightness));
                    let c = uniform(rng, ((1.0 - contrast).max(0.0), 1.0 + contrast));
                    let s = uniform(rng, ((1.0 - saturation).max(0.0), 1.0 + saturation));
                    let hu = uniform(rng, (-hue, hue));
                    x = adjust_hue(&adjust_saturation(&adjust_contrast(&adjust_brightness(&x, b), c), s), hu);
                    log.push(format!("jitter(b={b:.3},c={c:.3},s={s:.3},h={hu:.3})"));
                }
            }
            AugmentOp::Grayscale { p } => {
                if rng.random::<f32>() < p {
                    x = to_grayscale(&x, 1.0);
                    log.push("grayscale".into());
                }
            }
            AugmentOp::GaussianBlur { p, sigma } => {
                if rng.random::<f32>() < p {
                    let s = uniform(rng, sigma);
                    x = gaussian_blur(&x, s, None);
                    log.push(format!("blur(sigma={s:.3})"));
                }
            }
            AugmentOp::Solarization { p, threshold } => {
                if rng.random::<f32>() < p {
                    x = solarize(&x, threshold);
                    log.push(format!("solarize(t={threshold})"));
                }
            }
            AugmentOp::Rotation { p, max_degrees } => {
                if rng.random::<f32>() < p {
                    let d = uniform(rng, (-max_degrees, max_degrees));
                    let mean = ImageTensor::new(x.clone()).expect("finite").channel_mean();
                    x = rotate(&x, d, mean);
                    log.push(format!("rotate({d:.2})"));
                }
            }
        }
    }
    let mut out = ImageTensor::new(clamp_unit(x)).expect("augmentations keep values finite");
    if let Some(src) = image.source() {
        out = out.with_source(src.to_string());
    }
    (out, log)
}

/// Two independently sampled views of `image`, deterministic per seed.
pub fn augment_pair(image: &ImageTensor, policy: &AugmentPolicy, seed: u64) -> ImagePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (a, la) = augment_view(image, policy, &mut rng);
    rng.set_stream(2);
    rng.set_word_pos(0);
    let (b, lb) = augment_view(image, policy, &mut rng);
    ImagePair::new(a, b)
        .expect("views share the source shape")
        .with_augmentation(AugmentationRecord {
            seed: Some(seed),
            first: la,
            second: lb,
        })
}
