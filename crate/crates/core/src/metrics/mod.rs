//! Pairwise explanation metrics: simultaneous and conditional insertion,
//! deletion and average drop, maximum sensitivity and cascading
//! randomization sanity checks.

mod curves;
mod drop;
mod sanity;
mod sensitivity;

use serde::{Deserialize, Serialize};

pub use curves::{
    auc, insertion_deletion_curve, pixel_ranking, CurveConfig, CurveMode, CurveOutcome, EvaluationCurve,
};
pub use drop::{average_drop, DropMode, DropOutcome, DEFAULT_DROP_EPSILON};
pub use sanity::{pearson, rank_average, sanity_check, spearman, SanityStep, SanityTrace, DEFAULT_SANITY_STRIDE};
pub use sensitivity::{max_sensitivity, SensitivityResult};

use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::model::SimilarityModel;
use crate::saliency::ExplanationPair;

/// The six pairwise faithfulness metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    SI,
    SD,
    CI,
    CD,
    SAD,
    CAD,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::SI, Metric::SD, Metric::CI, Metric::CD, Metric::SAD, Metric::CAD];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::SI => "SI",
            Metric::SD => "SD",
            Metric::CI => "CI",
            Metric::CD => "CD",
            Metric::SAD => "SAD",
            Metric::CAD => "CAD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Unsupported(format!("unknown metric '{s}'")))
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Metric value for one pair; `None` when the pair is skipped (average
/// drop with a base score at or below the guard).
pub fn evaluate_metric(
    model: &dyn SimilarityModel,
    pair: &ImagePair,
    explanation: &ExplanationPair,
    metric: Metric,
    curve: &CurveConfig,
    drop_epsilon: f32,
) -> Result<Option<f32>> {
    let curve_mode = match metric {
        Metric::SI => Some(CurveMode::SI),
        Metric::SD => Some(CurveMode::SD),
        Metric::CI => Some(CurveMode::CI),
        Metric::CD => Some(CurveMode::CD),
        _ => None,
    };
    if let Some(mode) = curve_mode {
        return Ok(Some(insertion_deletion_curve(model, pair, explanation, mode, curve)?.auc));
    }
    let mode = if metric == Metric::SAD { DropMode::SAD } else { DropMode::CAD };
    Ok(average_drop(model, pair, explanation, mode, drop_epsilon)?.drop)
}
