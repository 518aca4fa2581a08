//! Activation-space explanations: Baseline-Grad-CAM, Interaction-CAM and
//! the Deep Similarity baseline.
//!
//! All maps are computed at activation resolution `(w, h)` from the
//! activations `A_i` (shape `(K, w, h)`) and the gradients `∂s/∂A_i`, then
//! bilinearly upsampled to the input size and min-max normalized.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ensure_finite, Error, Result};
use crate::image::ImagePair;
use crate::model::SimilarityModel;
use crate::saliency::{ExplanationPair, MethodInfo, Normalization};

/// Spatial reduction used for the joint activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Max,
    /// Attention pooling with the spatial mean as query.
    Attention,
}

impl Reduction {
    pub fn short_name(&self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Max => "max",
            Reduction::Attention => "attn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "max" => Ok(Reduction::Max),
            "attn" | "attention" => Ok(Reduction::Attention),
            _ => Err(Error::Argument(format!("unknown reduction '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamIntermediates {
    pub a1: Array3<f32>,
    pub a2: Array3<f32>,
    pub grad1: Array3<f32>,
    pub grad2: Array3<f32>,
    pub j1: Array1<f32>,
    pub j2: Array1<f32>,
    /// `J = J1 ⊙ J2`.
    pub j: Array1<f32>,
    /// `G[k][l] = <grad1_k, grad2_l>`.
    pub g: Array2<f32>,
    pub g1: Array1<f32>,
    pub g2: Array1<f32>,
}

fn check_same(a: &Array3<f32>, b: &Array3<f32>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::InputShape(format!("{what} shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Per-channel spatial reduction of `(K, w, h)` activations.
pub fn reduce_activation(a: &Array3<f32>, reduction: Reduction) -> Array1<f32> {
    let (k, w, h) = a.dim();
    let n = (w * h) as f64;
    match reduction {
        Reduction::Mean => a
            .axis_iter(Axis(0))
            .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
            .collect(),
        Reduction::Max => a
            .axis_iter(Axis(0))
            .map(|c| c.iter().copied().fold(f32::NEG_INFINITY, f32::max))
            .collect(),
        Reduction::Attention => {
            let cells: Vec<Vec<f64>> = (0..w * h)
                .map(|p| (0..k).map(|c| a[[c, p / h, p % h]] as f64).collect())
                .collect();
            let query: Vec<f64> = (0..k).map(|c| cells.iter().map(|v| v[c]).sum::<f64>() / n).collect();
            let scale = 1.0 / (k as f64).sqrt();
            let logits: Vec<f64> = cells
                .iter()
                .map(|v| v.iter().zip(&query).map(|(x, q)| x * q).sum::<f64>() * scale)
                .collect();
            let weights = crate::perturbation::softmax(&logits);
            (0..k)
                .map(|c| cells.iter().zip(&weights).map(|(v, wt)| v[c] * wt).sum::<f64>() as f32)
                .collect()
        }
    }
}

/// `J = J1 ⊙ J2` for the chosen reduction.
pub fn joint_activation(a1: &Array3<f32>, a2: &Array3<f32>, reduction: Reduction) -> Result<Array1<f32>> {
    check_same(a1, a2, "activation")?;
    Ok(reduce_activation(a1, reduction) * reduce_activation(a2, reduction))
}

/// Gradient cross-correlation `G` with `G[k][l] = <vec(grad1_k), vec(grad2_l)>`.
pub fn gradient_interaction_matrix(grad1: &Array3<f32>, grad2: &Array3<f32>) -> Result<Array2<f32>> {
    check_same(grad1, grad2, "gradient")?;
    let k = grad1.dim().0;
    let flat = |g: &Array3<f32>| -> Array2<f64> {
        g.mapv(|v| v as f64).into_shape_with_order((k, g.len() / k.max(1))).expect("contiguous")
    };
    let a = flat(grad1);
    let b = flat(grad2);
    Ok(a.dot(&b.t()).mapv(|v| v as f32))
}

/// Row maxima (`g1`) and column maxima (`g2`) of `G`.
pub fn gradient_interaction(grad1: &Array3<f32>, grad2: &Array3<f32>) -> Result<(Array1<f32>, Array1<f32>)> {
    let g = gradient_interaction_matrix(grad1, grad2)?;
    Ok(reduce_gradient_interaction(&g))
}

pub fn reduce_gradient_interaction(g: &Array2<f32>) -> (Array1<f32>, Array1<f32>) {
    let row = g
        .axis_iter(Axis(0))
        .map(|r| r.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    let col = g
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    (row, col)
}

/// `E = Σ_k [grad_k]₊ ⊙ A_k`, point-wise.
pub fn baseline_grad_cam_map(a: &Array3<f32>, grad: &Array3<f32>) -> Result<Array2<f32>> {
    check_same(a, grad, "activation/gradient")?;
    let (_, w, h) = a.dim();
    let mut out = Array2::<f64>::zeros((w, h));
    for (ac, gc) in a.axis_iter(Axis(0)).zip(grad.axis_iter(Axis(0))) {
        ndarray::Zip::from(&mut out)
            .and(&ac)
            .and(&gc)
            .for_each(|o, &av, &gv| *o += gv.max(0.0) as f64 * av as f64);
    }
    Ok(out.mapv(|v| v as f32))
}

/// `E = Σ_k [weight_k]₊ · A_k`.
pub fn weighted_channel_sum(a: &Array3<f32>, weights: &Array1<f32>) -> Result<Array2<f32>> {
    if weights.len() != a.dim().0 {
        return Err(Error::InputShape(format!(
            "{} channel weights for {} channels",
            weights.len(),
            a.dim().0
        )));
    }
    let (_, w, h) = a.dim();
    let mut out = Array2::<f64>::zeros((w, h));
    for (ac, &wt) in a.axis_iter(Axis(0)).zip(weights.iter()) {
        let wt = wt.max(0.0) as f64;
        if wt == 0.0 {
            continue;
        }
        out.zip_mut_with(&ac, |o, &v| *o += wt * v as f64);
    }
    Ok(out.mapv(|v| v as f32))
}

/// Interaction-CAM maps at activation resolution:
/// `E_i = Σ_k [j_k · g_i,k]₊ · A_i,k`, with `g ≡ 1` when the gradient
/// interaction is disabled.
pub fn interaction_cam_maps(
    a1: &Array3<f32>,
    a2: &Array3<f32>,
    j: &Array1<f32>,
    g1: Option<&Array1<f32>>,
    g2: Option<&Array1<f32>>,
) -> Result<(Array2<f32>, Array2<f32>)> {
    check_same(a1, a2, "activation")?;
    let w1 = match g1 {
        Some(g) => j * g,
        None => j.clone(),
    };
    let w2 = match g2 {
        Some(g) => j * g,
        None => j.clone(),
    };
    Ok((weighted_channel_sum(a1, &w1)?, weighted_channel_sum(a2, &w2)?))
}

/// `E1(x, y) = Σ_k A1_k(x, y) · mean(A2_k)` and symmetrically for `E2`.
pub fn deep_similarity_maps(a1: &Array3<f32>, a2: &Array3<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
    check_same(a1, a2, "activation")?;
    let dot_with = |a: &Array3<f32>, v: &Array1<f32>| -> Array2<f32> {
        let (_, w, h) = a.dim();
        let mut out = Array2::<f64>::zeros((w, h));
        for (ac, &m) in a.axis_iter(Axis(0)).zip(v.iter()) {
            out.zip_mut_with(&ac, |o, &x| *o += x as f64 * m as f64);
        }
        out.mapv(|v| v as f32)
    };
    let m1 = reduce_activation(a1, Reduction::Mean);
    let m2 = reduce_activation(a2, Reduction::Mean);
    Ok((dot_with(a1, &m2), dot_with(a2, &m1)))
}

/// Bilinear upsampling with aligned corners.
pub fn upsample_bilinear(map: &Array2<f32>, target: (usize, usize)) -> Result<Array2<f32>> {
    let (h, w) = map.dim();
    let (th, tw) = target;
    if th < h || tw < w || h == 0 || w == 0 {
        return Err(Error::Argument(format!(
            "cannot upsample {h}x{w} to smaller target {th}x{tw}"
        )));
    }
    if (th, tw) == (h, w) {
        return Ok(map.clone());
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    Ok(Array2::from_shape_fn((th, tw), |(y, x)| {
        let (y0, y1, fy) = coord(y, th, h);
        let (x0, x1, fx) = coord(x, tw, w);
        let v = |a: usize, b: usize| map[[a, b]] as f64;
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }))
}

/// Bilinear upsampling followed by min-max normalization.
pub fn upsample_normalize(map: &Array2<f32>, target: (usize, usize)) -> Result<Array2<f32>> {
    ensure_finite(map.iter(), "cam map")?;
    let up = upsample_bilinear(map, target)?;
    crate::saliency::postprocess_map(&up, Normalization::Minmax, None)
}

/// Activations, gradients and the derived interaction terms of a pair.
pub fn cam_intermediates(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    reduction: Reduction,
) -> Result<CamIntermediates> {
    let ag = model.activation_gradients(&pair.first, &pair.second)?;
    ensure_finite(ag.grad1.iter().chain(ag.grad2.iter()), "activation gradients")?;
    let j1 = reduce_activation(&ag.activations1, reduction);
    let j2 = reduce_activation(&ag.activations2, reduction);
    let j = &j1 * &j2;
    let g = gradient_interaction_matrix(&ag.grad1, &ag.grad2)?;
    let (g1, g2) = reduce_gradient_interaction(&g);
    Ok(CamIntermediates {
        a1: ag.activations1,
        a2: ag.activations2,
        grad1: ag.grad1,
        grad2: ag.grad2,
        j1,
        j2,
        j,
        g,
        g1,
        g2,
    })
}

fn finish(pair: &ImagePair, m1: Array2<f32>, m2: Array2<f32>, method: MethodInfo) -> Result<ExplanationPair> {
    let target = (pair.height(), pair.width());
    let mut e = ExplanationPair::new(upsample_normalize(&m1, target)?, upsample_normalize(&m2, target)?, method)?;
    e.normalization = Normalization::Minmax;
    Ok(e)
}

pub fn baseline_grad_cam(model: &dyn SimilarityModel, pair: &ImagePair) -> Result<ExplanationPair> {
    let ag = model.activation_gradients(&pair.first, &pair.second)?;
    let m1 = baseline_grad_cam_map(&ag.activations1, &ag.grad1)?;
    let m2 = baseline_grad_cam_map(&ag.activations2, &ag.grad2)?;
    finish(pair, m1, m2, MethodInfo::new("grad-cam-baseline", json!({})))
}

pub fn interaction_cam_name(reduction: Reduction, use_gradient_interaction: bool) -> String {
    format!(
        "int-cam/{}/{}",
        reduction.short_name(),
        if use_gradient_interaction { "gi" } else { "nogi" }
    )
}

pub fn interaction_cam(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    reduction: Reduction,
    use_gradient_interaction: bool,
) -> Result<ExplanationPair> {
    let c = cam_intermediates(model, pair, reduction)?;
    let (m1, m2) = if use_gradient_interaction {
        interaction_cam_maps(&c.a1, &c.a2, &c.j, Some(&c.g1), Some(&c.g2))?
    } else {
        interaction_cam_maps(&c.a1, &c.a2, &c.j, None, None)?
    };
    finish(
        pair,
        m1,
        m2,
        MethodInfo::new(
            interaction_cam_name(reduction, use_gradient_interaction),
            json!({"reduction": reduction, "gradient_interaction": use_gradient_interaction}),
        ),
    )
}

pub fn deep_similarity(model: &dyn SimilarityModel, pair: &ImagePair) -> Result<ExplanationPair> {
    let b1 = model.encode(&pair.first)?;
    let b2 = model.encode(&pair.second)?;
    let (m1, m2) = deep_similarity_maps(&b1.activations, &b2.activations)?;
    finish(pair, m1, m2, MethodInfo::new("deep-sim", json!({})))
}
