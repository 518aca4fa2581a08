use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::methods::Explainer;
use crate::model::ContrastiveModel;
use crate::saliency::ExplanationPair;

/// Randomization depth increment between recorded steps.
pub const DEFAULT_SANITY_STRIDE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityStep {
    pub layers_randomized: usize,
    pub maps: ExplanationPair,
    pub spearman1: f32,
    pub spearman2: f32,
    /// Set when a map (this step's or the reference) is constant.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityTrace {
    pub steps: Vec<SanityStep>,
}

/// Ranks starting at 1, ties get their average rank.
pub fn rank_average(values: &[f32]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_f64(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument("pearson needs two equally long lists of length >= 2".into()));
    }
    pearson_f64(xs, ys).ok_or_else(|| Error::Numeric("correlation undefined for a constant input".into()))
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(xs: &[f32], ys: &[f32]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    pearson_f64(&rank_average(xs), &rank_average(ys))
}

fn flat(m: &ndarray::Array2<f32>) -> Vec<f32> {
    m.iter().copied().collect()
}

/// Cascading randomization from the top layer down, recording maps and
/// their rank correlation with the unrandomized maps at depths
/// `0, stride, 2 stride, ..., all`.
pub fn sanity_check(
    model: &ContrastiveModel,
    pair: &ImagePair,
    method: &dyn Explainer,
    stride_layers: usize,
    seed: u64,
) -> Result<SanityTrace> {
    if stride_layers == 0 {
        return Err(Error::Argument("stride_layers must be at least 1".into()));
    }
    let total = model.layers().len();
    let mut depths: Vec<usize> = (0..=total).step_by(stride_layers).collect();
    if *depths.last().expect("non-empty") != total {
        depths.push(total);
    }
    let reference = method.explain(model, pair)?;
    let r1 = flat(&reference.map1);
    let r2 = flat(&reference.map2);
    let mut steps = Vec::with_capacity(depths.len());
    for depth in depths {
        let maps = if depth == 0 {
            reference.clone()
        } else {
            let randomized = model.randomize_layers(depth, seed)?;
            method.explain(&randomized, pair)?
        };
        let s1 = spearman(&r1, &flat(&maps.map1));
        let s2 = spearman(&r2, &flat(&maps.map2));
        steps.push(SanityStep {
            layers_randomized: depth,
            spearman1: s1.unwrap_or(0.0) as f32,
            spearman2: s2.unwrap_or(0.0) as f32,
            degenerate: s1.is_none() || s2.is_none(),
            maps,
        });
    }
    Ok(SanityTrace { steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(rank_average(&[3.0, 1.0, 1.0, 2.0]), vec![4.0, 1.5, 1.5, 3.0]);
        let x = [0.3f32, 0.1, 0.9, 0.5];
        assert_eq!(spearman(&x, &x), Some(1.0));
        let y: Vec<f32> = x.iter().map(|v| v.powi(3) + 2.0).collect();
        assert_eq!(spearman(&x, &y), Some(1.0));
        assert_eq!(spearman(&x, &[1.0; 4]), None);
    }
}
