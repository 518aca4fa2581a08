use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePair, ImageTensor};
use crate::methods::Explainer;
use crate::model::SimilarityModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub value: f32,
    pub radius: f32,
    pub samples: usize,
    pub seed: u64,
    /// Set when the unperturbed maps have zero norm.
    pub degenerate: bool,
    /// Running maximum after each sample.
    pub running_max: Vec<f32>,
}

fn perturb<R: Rng>(image: &ImageTensor, radius: f32, rng: &mut R) -> Result<ImageTensor> {
    if radius == 0.0 {
        return Ok(image.clone());
    }
    ImageTensor::new(image.data().mapv(|v| v + rng.random_range(-radius..=radius)))
}

fn concat_norm_diff(a: (&ndarray::Array2<f32>, &ndarray::Array2<f32>), b: (&ndarray::Array2<f32>, &ndarray::Array2<f32>)) -> f64 {
    let sq = |x: &ndarray::Array2<f32>, y: &ndarray::Array2<f32>| -> f64 {
        x.iter().zip(y.iter()).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum()
    };
    (sq(a.0, b.0) + sq(a.1, b.1)).sqrt()
}

/// Largest relative change of the concatenated maps under uniform
/// perturbations with `‖δ‖∞ ≤ radius` applied to both images.
pub fn max_sensitivity(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    method: &dyn Explainer,
    radius: f32,
    n_samples: usize,
    seed: u64,
) -> Result<SensitivityResult> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Argument(format!("radius {radius} must be finite and >= 0")));
    }
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    let base = method.explain(model, pair)?;
    let zero1 = ndarray::Array2::<f32>::zeros(base.map1.raw_dim());
    let zero2 = ndarray::Array2::<f32>::zeros(base.map2.raw_dim());
    let norm = concat_norm_diff((&base.map1, &base.map2), (&zero1, &zero2));
    let mut result = SensitivityResult {
        value: 0.0,
        radius,
        samples: n_samples,
        seed,
        degenerate: norm == 0.0,
        running_max: Vec::with_capacity(n_samples),
    };
    if result.degenerate {
        result.running_max = vec![0.0; n_samples];
        return Ok(result);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..n_samples {
        let p = ImagePair::new(perturb(&pair.first, radius, &mut rng)?, perturb(&pair.second, radius, &mut rng)?)?;
        let e = method.explain(model, &p)?;
        let ratio = concat_norm_diff((&e.map1, &e.map2), (&base.map1, &base.map2)) / norm;
        best = best.max(ratio);
        result.running_max.push(best as f32);
    }
    result.value = best as f32;
    Ok(result)
}
