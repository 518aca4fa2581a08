use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePair, ImageTensor};
use crate::model::SimilarityModel;
use crate::saliency::ExplanationPair;

/// Pairs whose base similarity is at or below this guard are skipped.
pub const DEFAULT_DROP_EPSILON: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropMode {
    /// Both images masked together.
    SAD,
    /// One image masked at a time, averaged over both directions.
    CAD,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropOutcome {
    pub base_score: f32,
    /// `None` if the pair was skipped.
    pub drop: Option<f32>,
}

impl DropOutcome {
    pub fn skipped(&self) -> bool {
        self.drop.is_none()
    }
}

fn check_unit(map: &ndarray::Array2<f32>) -> Result<()> {
    if map.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Argument("average drop needs maps normalized to [0, 1]".into()));
    }
    Ok(())
}

fn relative_drop(base: f32, masked: f32) -> f32 {
    ((base as f64 - masked as f64).max(0.0) / base as f64) as f32
}

/// `max(0, s - s_masked) / s` with inputs masked as `I ⊙ map`.
pub fn average_drop(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    explanations: &ExplanationPair,
    mode: DropMode,
    epsilon: f32,
) -> Result<DropOutcome> {
    let (h, w) = (pair.height(), pair.width());
    if explanations.map1.dim() != (h, w) || explanations.map2.dim() != (h, w) {
        return Err(Error::Argument("explanation shape does not match images".into()));
    }
    check_unit(&explanations.map1)?;
    check_unit(&explanations.map2)?;
    let base = model.score(&pair.first, &pair.second)?;
    if base <= epsilon {
        return Ok(DropOutcome {
            base_score: base,
            drop: None,
        });
    }
    let m1: ImageTensor = pair.first.masked(&explanations.map1)?;
    let m2: ImageTensor = pair.second.masked(&explanations.map2)?;
    let drop = match mode {
        DropMode::SAD => relative_drop(base, model.score(&m1, &m2)?),
        DropMode::CAD => {
            let d1 = relative_drop(base, model.score(&m1, &pair.second)?);
            let d2 = relative_drop(base, model.score(&pair.first, &m2)?);
            ((d1 as f64 + d2 as f64) / 2.0) as f32
        }
    };
    Ok(DropOutcome {
        base_score: base,
        drop: Some(drop),
    })
}
