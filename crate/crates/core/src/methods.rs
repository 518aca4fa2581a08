//! Named explanation methods, as used by reports and the command line.
//!
//! | name                                   | method                         |
//! |----------------------------------------|--------------------------------|
//! | `input-x-grad`, `guided-input-x-grad`  | Input×Grad                     |
//! | `smooth-grad`, `guided-smooth-grad`    | Smooth-Grad                    |
//! | `avg-transforms[/KIND][/guided][/smooth]` | Averaged Transforms         |
//! | `cond-occlusion`, `pair-occlusion`     | occlusion                      |
//! | `grad-cam-baseline`                    | Baseline-Grad-CAM              |
//! | `int-cam/{mean,max,attn}/{gi,nogi}`    | Interaction-CAM                |
//! | `deep-sim`                             | Deep Similarity                |
//! | `random`                               | uniform random maps            |
//!
//! Maps returned by [`Method::explain`] are normalized for evaluation:
//! saliency maps with `abs_minmax`, everything else with `minmax`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cam::{baseline_grad_cam, deep_similarity, interaction_cam, interaction_cam_name, Reduction};
use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::model::{BackpropMode, SimilarityModel};
use crate::perturbation::{conditional_occlusion, pairwise_occlusion, OcclusionConfig};
use crate::saliency::{
    averaged_transforms, default_noise_sigma, input_x_gradient_with, smooth_grad_with, AveragedOptions,
    ExplanationPair, MethodInfo, Normalization, SmoothOptions, DEFAULT_SMOOTH_SAMPLES,
};
use crate::transforms::TransformKind;

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    InputXGrad { guided: bool },
    SmoothGrad { guided: bool },
    AveragedTransforms { kind: TransformKind, guided: bool, smooth: bool },
    ConditionalOcclusion,
    PairwiseOcclusion,
    GradCamBaseline,
    InteractionCam { reduction: Reduction, gradient_interaction: bool },
    DeepSimilarity,
    Random,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::InputXGrad { guided } => write!(f, "{}input-x-grad", if *guided { "guided-" } else { "" }),
            Method::SmoothGrad { guided } => write!(f, "{}smooth-grad", if *guided { "guided-" } else { "" }),
            Method::AveragedTransforms { kind, guided, smooth } => {
                write!(f, "avg-transforms/{kind}")?;
                if *guided {
                    write!(f, "/guided")?;
                }
                if *smooth {
                    write!(f, "/smooth")?;
                }
                Ok(())
            }
            Method::ConditionalOcclusion => write!(f, "cond-occlusion"),
            Method::PairwiseOcclusion => write!(f, "pair-occlusion"),
            Method::GradCamBaseline => write!(f, "grad-cam-baseline"),
            Method::InteractionCam {
                reduction,
                gradient_interaction,
            } => write!(f, "{}", interaction_cam_name(*reduction, *gradient_interaction)),
            Method::DeepSimilarity => write!(f, "deep-sim"),
            Method::Random => write!(f, "random"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Unsupported(format!("unknown method '{s}'"));
        let s = s.trim();
        Ok(match s {
            "input-x-grad" => Method::InputXGrad { guided: false },
            "guided-input-x-grad" => Method::InputXGrad { guided: true },
            "smooth-grad" => Method::SmoothGrad { guided: false },
            "guided-smooth-grad" => Method::SmoothGrad { guided: true },
            "cond-occlusion" => Method::ConditionalOcclusion,
            "pair-occlusion" => Method::PairwiseOcclusion,
            "grad-cam-baseline" => Method::GradCamBaseline,
            "deep-sim" => Method::DeepSimilarity,
            "random" => Method::Random,
            _ if s.starts_with("int-cam/") => {
                let parts: Vec<&str> = s.split('/').collect();
                if parts.len() != 3 {
                    return Err(unknown());
                }
                let reduction = Reduction::parse(parts[1]).map_err(|_| unknown())?;
                let gradient_interaction = match parts[2] {
                    "gi" => true,
                    "nogi" => false,
                    _ => return Err(unknown()),
                };
                Method::InteractionCam {
                    reduction,
                    gradient_interaction,
                }
            }
            _ if s == "avg-transforms" || s.starts_with("avg-transforms/") => {
                let mut kind = TransformKind::GaussianBlur;
                let mut guided = false;
                let mut smooth = false;
                for part in s.split('/').skip(1) {
                    match part {
                        "guided" => guided = true,
                        "smooth" => smooth = true,
                        other => kind = other.parse().map_err(|_| unknown())?,
                    }
                }
                Method::AveragedTransforms { kind, guided, smooth }
            }
            _ => return Err(unknown()),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Shared settings for methods that need more than the pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub occlusion: OcclusionConfig,
    pub averaged: AveragedOptions,
    pub smooth_samples: usize,
    /// `None` uses a tenth of each image's value range.
    pub smooth_sigma: Option<f32>,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            occlusion: OcclusionConfig::default(),
            averaged: AveragedOptions::default(),
            smooth_samples: DEFAULT_SMOOTH_SAMPLES,
            smooth_sigma: None,
        }
    }
}

impl MethodSettings {
    /// Defaults with occlusion geometry scaled to `side`-pixel images.
    pub fn for_side(side: usize) -> Self {
        Self {
            occlusion: OcclusionConfig::scaled_for(side),
            ..Self::default()
        }
    }
}

fn random_map<R: Rng>(h: usize, w: usize, rng: &mut R) -> Array2<f32> {
    Array2::from_shape_fn((h, w), |_| rng.random::<f32>())
}

impl Method {
    pub fn is_saliency(&self) -> bool {
        matches!(
            self,
            Method::InputXGrad { .. } | Method::SmoothGrad { .. } | Method::AveragedTransforms { .. }
        )
    }

    /// Raw (unnormalized) maps.
    pub fn explain_raw(
        &self,
        model: &dyn SimilarityModel,
        pair: &ImagePair,
        settings: &MethodSettings,
        seed: u64,
    ) -> Result<ExplanationPair> {
        let mode = |g: bool| if g { BackpropMode::Guided } else { BackpropMode::Standard };
        let mut e = match self {
            Method::InputXGrad { guided } => input_x_gradient_with(model, pair, mode(*guided))?,
            Method::SmoothGrad { guided } => {
                let sigma = settings.smooth_sigma.unwrap_or_else(|| default_noise_sigma(&pair.first));
                smooth_grad_with(model, pair, settings.smooth_samples, sigma, seed, mode(*guided))?
            }
            Method::AveragedTransforms { kind, guided, smooth } => {
                let options = AveragedOptions {
                    guided: *guided,
                    smooth: smooth.then_some(SmoothOptions {
                        n_samples: settings.smooth_samples,
                        noise_sigma: settings.smooth_sigma,
                    }),
                    ..settings.averaged
                };
                averaged_transforms(model, pair, *kind, &options, seed)?
            }
            Method::ConditionalOcclusion => conditional_occlusion(model, pair, &settings.occlusion)?,
            Method::PairwiseOcclusion => {
                let cfg = OcclusionConfig {
                    seed: settings.occlusion.seed ^ seed,
                    ..settings.occlusion.clone()
                };
                pairwise_occlusion(model, pair, &cfg)?
            }
            Method::GradCamBaseline => baseline_grad_cam(model, pair)?,
            Method::InteractionCam {
                reduction,
                gradient_interaction,
            } => interaction_cam(model, pair, *reduction, *gradient_interaction)?,
            Method::DeepSimilarity => deep_similarity(model, pair)?,
            Method::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (h, w) = (pair.height(), pair.width());
                let m1 = random_map(h, w, &mut rng);
                let m2 = random_map(h, w, &mut rng);
                ExplanationPair::new(m1, m2, MethodInfo::new("random", json!({"seed": seed})))?
            }
        };
        e.method.name = self.to_string();
        Ok(e)
    }

    /// Maps normalized for ranking and masking.
    pub fn explain(
        &self,
        model: &dyn SimilarityModel,
        pair: &ImagePair,
        settings: &MethodSettings,
        seed: u64,
    ) -> Result<ExplanationPair> {
        let raw = self.explain_raw(model, pair, settings, seed)?;
        let mode = if self.is_saliency() {
            Normalization::AbsMinmax
        } else {
            Normalization::Minmax
        };
        raw.normalized(mode, None)
    }
}

/// Anything that maps a model and a pair to an explanation.
pub trait Explainer {
    fn explain(&self, model: &dyn SimilarityModel, pair: &ImagePair) -> Result<ExplanationPair>;
}

impl<F> Explainer for F
where
    F: Fn(&dyn SimilarityModel, &ImagePair) -> Result<ExplanationPair>,
{
    fn explain(&self, model: &dyn SimilarityModel, pair: &ImagePair) -> Result<ExplanationPair> {
        self(model, pair)
    }
}

/// A [`Method`] bound to its settings and seed.
#[derive(Debug, Clone)]
pub struct Configured {
    pub method: Method,
    pub settings: MethodSettings,
    pub seed: u64,
}

impl Explainer for Configured {
    fn explain(&self, model: &dyn SimilarityModel, pair: &ImagePair) -> Result<ExplanationPair> {
        self.method.explain(model, pair, &self.settings, self.seed)
    }
}
