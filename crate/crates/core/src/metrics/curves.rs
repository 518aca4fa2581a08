use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePair, ImageTensor};
use crate::model::{similarity, SimilarityModel};
use crate::perturbation::IMAGENET_MEAN;
use crate::saliency::ExplanationPair;
use crate::transforms::gaussian_blur;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveMode {
    /// Simultaneous insertion.
    SI,
    /// Simultaneous deletion.
    SD,
    /// Conditional insertion.
    CI,
    /// Conditional deletion.
    CD,
}

impl CurveMode {
    fn insertion(&self) -> bool {
        matches!(self, CurveMode::SI | CurveMode::CI)
    }

    fn conditional(&self) -> bool {
        matches!(self, CurveMode::CI | CurveMode::CD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveConfig {
    /// Pixels changed per step; `None` means the image width.
    pub pixels_per_step: Option<usize>,
    /// Deletion fill colour.
    pub fill: [f32; 3],
    /// Insertion baseline blur.
    pub blur_sigma: f32,
    pub blur_radius: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            pixels_per_step: None,
            fill: IMAGENET_MEAN,
            blur_sigma: 5.0,
            blur_radius: 5,
        }
    }
}

impl CurveConfig {
    pub fn step_for(&self, width: usize) -> usize {
        self.pixels_per_step.unwrap_or(width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCurve {
    pub fractions: Vec<f32>,
    pub scores: Vec<f32>,
    pub auc: f32,
    pub mode: CurveMode,
}

/// For conditional modes `curves` holds one curve per altered image and
/// `auc` is their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveOutcome {
    pub mode: CurveMode,
    pub curves: Vec<EvaluationCurve>,
    pub auc: f32,
}

/// Trapezoidal area under `scores` over `fractions`.
pub fn auc(fractions: &[f32], scores: &[f32]) -> Result<f32> {
    if fractions.len() != scores.len() {
        return Err(Error::Argument("fractions and scores differ in length".into()));
    }
    if fractions.len() < 2 {
        return Err(Error::Argument("a curve needs at least two points".into()));
    }
    let mut area = 0.0f64;
    for i in 1..fractions.len() {
        let dx = fractions[i] as f64 - fractions[i - 1] as f64;
        area += dx * (scores[i] as f64 + scores[i - 1] as f64) / 2.0;
    }
    Ok(area as f32)
}

/// Pixel indices (row-major) sorted by descending value; ties keep
/// row-major order.
pub fn pixel_ranking(map: &Array2<f32>) -> Vec<usize> {
    let values: Vec<f32> = map.iter().copied().collect();
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

struct Walker {
    current: Array3<f32>,
    source: Array3<f32>,
    order: Vec<usize>,
    width: usize,
}

impl Walker {
    fn apply(&mut self, from: usize, to: usize) {
        for &p in &self.order[from..to] {
            let (y, x) = (p / self.width, p % self.width);
            for c in 0..3 {
                self.current[[c, y, x]] = self.source[[c, y, x]];
            }
        }
    }

    fn image(&self) -> ImageTensor {
        ImageTensor::new(self.current.clone()).expect("finite")
    }
}

fn walker(image: &ImageTensor, map: &Array2<f32>, insertion: bool, config: &CurveConfig) -> Walker {
    let (_, h, w) = image.shape();
    let (start, source) = if insertion {
        (
            gaussian_blur(image.data(), config.blur_sigma, Some(config.blur_radius)),
            image.data().clone(),
        )
    } else {
        let fill = Array3::from_shape_fn((3, h, w), |(c, _, _)| config.fill[c]);
        (image.data().clone(), fill)
    };
    Walker {
        current: start,
        source,
        order: pixel_ranking(map),
        width: w,
    }
}

fn emb(model: &dyn SimilarityModel, img: &ImageTensor) -> Result<ndarray::Array1<f32>> {
    Ok(model.encode(img)?.embedding)
}

fn sim(a: &ndarray::Array1<f32>, b: &ndarray::Array1<f32>) -> Result<f32> {
    similarity(a.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"))
}

/// Insertion or deletion curve; `L` pixels per step, endpoints computed
/// exactly.
pub fn insertion_deletion_curve(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    explanations: &ExplanationPair,
    mode: CurveMode,
    config: &CurveConfig,
) -> Result<CurveOutcome> {
    let (h, w) = (pair.height(), pair.width());
    if explanations.map1.dim() != (h, w) || explanations.map2.dim() != (h, w) {
        return Err(Error::Argument(format!(
            "explanation shapes {:?}/{:?} do not match images {h}x{w}",
            explanations.map1.dim(),
            explanations.map2.dim()
        )));
    }
    let step = config.step_for(w);
    if step == 0 {
        return Err(Error::Argument("pixels_per_step must be at least 1".into()));
    }
    let n = h * w;
    let steps = n.div_ceil(step);
    let bounds: Vec<usize> = (0..=steps).map(|k| (k * step).min(n)).collect();
    let fractions: Vec<f32> = bounds.iter().map(|&b| (b as f64 / n as f64) as f32).collect();
    let insertion = mode.insertion();

    let curves = if mode.conditional() {
        let mut curves = Vec::with_capacity(2);
        let fixed1 = emb(model, &pair.first)?;
        let fixed2 = emb(model, &pair.second)?;
        for (img, map, fixed) in [
            (&pair.first, &explanations.map1, &fixed2),
            (&pair.second, &explanations.map2, &fixed1),
        ] {
            let mut wk = walker(img, map, insertion, config);
            let mut scores = Vec::with_capacity(bounds.len());
            for k in 0..bounds.len() {
                if k > 0 {
                    wk.apply(bounds[k - 1], bounds[k]);
                }
                scores.push(sim(&emb(model, &wk.image())?, fixed)?);
            }
            curves.push(EvaluationCurve {
                auc: auc(&fractions, &scores)?,
                fractions: fractions.clone(),
                scores,
                mode,
            });
        }
        curves
    } else {
        let mut w1 = walker(&pair.first, &explanations.map1, insertion, config);
        let mut w2 = walker(&pair.second, &explanations.map2, insertion, config);
        let mut scores = Vec::with_capacity(bounds.len());
        for k in 0..bounds.len() {
            if k > 0 {
                w1.apply(bounds[k - 1], bounds[k]);
                w2.apply(bounds[k - 1], bounds[k]);
            }
            scores.push(sim(&emb(model, &w1.image())?, &emb(model, &w2.image())?)?);
        }
        vec![EvaluationCurve {
            auc: auc(&fractions, &scores)?,
            fractions,
            scores,
            mode,
        }]
    };
    let mean = curves.iter().map(|c| c.auc as f64).sum::<f64>() / curves.len() as f64;
    Ok(CurveOutcome {
        mode,
        curves,
        auc: mean as f32,
    })
}
