//! Run configuration: an optional JSON file overridden by command-line flags.

use std::path::{Path, PathBuf};

use paircam_core::inversion::{InversionConfig, LrScaling};
use paircam_core::methods::MethodSettings;
use paircam_core::metrics::{CurveConfig, DEFAULT_DROP_EPSILON, DEFAULT_SANITY_STRIDE};
use paircam_core::model::ToyTrainConfig;
use paircam_core::transforms::AugmentPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a command needs; serialized verbatim into its reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    /// `toy` (trained and cached), `untrained[:SEED]`, or a checkpoint path.
    pub model: String,
    /// `toy[:SEED]`, a directory of PNGs, one image, or `first.png,second.png`.
    pub pairs: String,
    pub methods: Vec<String>,
    pub metrics: Vec<String>,
    pub transform: String,
    pub out: PathBuf,
    pub seed: u64,
    pub n_pairs: usize,
    /// Side of generated corpus images.
    pub image_side: usize,
    /// First corpus index used for evaluation pairs, past the training images.
    pub corpus_offset: usize,
    pub pair_policy: AugmentPolicy,
    /// Method settings; `None` scales the paper geometry to the image side.
    pub settings: Option<MethodSettings>,
    pub mask_size: Option<usize>,
    pub stride: Option<usize>,
    pub n_masks: Option<usize>,
    pub curve: CurveConfig,
    /// Deletion fill; `None` uses the per-channel mean of the pair source.
    pub deletion_fill: Option<[f32; 3]>,
    pub drop_epsilon: f32,
    pub sensitivity_radius: f32,
    pub sensitivity_samples: usize,
    pub sanity_stride: usize,
    pub layers: Vec<usize>,
    pub inversion: InversionConfig,
    pub bench_runs: usize,
    pub bench_warmup: usize,
    pub training: ToyTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            model: "toy".into(),
            pairs: "toy".into(),
            methods: vec!["int-cam/mean/gi".into()],
            metrics: vec!["SI".into(), "SD".into(), "CI".into(), "CD".into(), "SAD".into(), "CAD".into()],
            transform: "gaussian_blur".into(),
            out: PathBuf::from("out"),
            seed: 0,
            n_pairs: 50,
            image_side: 32,
            corpus_offset: 100_000,
            pair_policy: AugmentPolicy::contrastive_default(),
            settings: None,
            mask_size: None,
            stride: None,
            n_masks: None,
            curve: CurveConfig::default(),
            deletion_fill: None,
            drop_epsilon: DEFAULT_DROP_EPSILON,
            sensitivity_radius: 0.02,
            sensitivity_samples: 10,
            sanity_stride: DEFAULT_SANITY_STRIDE,
            layers: vec![1, 2, 3, 4],
            inversion: InversionConfig {
                lr_scaling: LrScaling::InverseTargetMagnitude,
                ..InversionConfig::default()
            },
            bench_runs: 5,
            bench_warmup: 1,
            training: ToyTrainConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the file (or default) value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub pairs: Option<String>,
    pub methods: Option<Vec<String>>,
    pub metrics: Option<Vec<String>>,
    pub transform: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_pairs: Option<usize>,
    pub pixels_per_step: Option<usize>,
    pub mask_size: Option<usize>,
    pub stride: Option<usize>,
    pub n_masks: Option<usize>,
    pub layers: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }

    pub fn resolve(command: &str, file: Option<&Path>, flags: Overrides) -> CliResult<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.command = command.to_string();
        if let Some(v) = flags.model {
            cfg.model = v;
        }
        if let Some(v) = flags.pairs {
            cfg.pairs = v;
        }
        if let Some(v) = flags.methods {
            cfg.methods = v;
        }
        if let Some(v) = flags.metrics {
            cfg.metrics = v;
        }
        if let Some(v) = flags.transform {
            cfg.transform = v;
        }
        if let Some(v) = flags.out {
            cfg.out = v;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.n_pairs {
            cfg.n_pairs = v;
        }
        if let Some(v) = flags.pixels_per_step {
            cfg.curve.pixels_per_step = Some(v);
        }
        if flags.mask_size.is_some() {
            cfg.mask_size = flags.mask_size;
        }
        if flags.stride.is_some() {
            cfg.stride = flags.stride;
        }
        if flags.n_masks.is_some() {
            cfg.n_masks = flags.n_masks;
        }
        if let Some(v) = flags.layers {
            cfg.layers = v;
        }
        Ok(cfg)
    }

    /// Method settings for `side`-pixel images with the occlusion overrides applied.
    pub fn method_settings(&self, side: usize) -> MethodSettings {
        let mut s = self.settings.clone().unwrap_or_else(|| MethodSettings::for_side(side));
        if let Some(v) = self.mask_size {
            s.occlusion.mask_size = v;
        }
        if let Some(v) = self.stride {
            s.occlusion.stride = v;
        }
        if let Some(v) = self.n_masks {
            s.occlusion.n_masks = v;
        }
        s
    }
}

/// Splits a comma-separated flag value.
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}
