//! Resolving `--model` and `--pairs` into a model and image pairs.

use std::path::{Path, PathBuf};

use paircam_core::corpus::ShapeCorpus;
use paircam_core::model::{load_checkpoint, save_checkpoint, train_toy_contrastive, ToyModelConfig, ToyTrainConfig};
use paircam_core::transforms::augment_pair;
use paircam_core::{ContrastiveModel, ImagePair, ImageTensor};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{load_image, write_json};

pub const CACHE_ENV: &str = "PAIRCAM_CACHE";

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("paircam-cache"))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Trains the toy model for `config`, or loads it from the cache when an
/// identical configuration was trained before.
pub fn cached_toy_model(config: &ToyTrainConfig) -> CliResult<ContrastiveModel> {
    let key = fnv1a(serde_json::to_string(config)?.as_bytes());
    let dir = cache_dir();
    let path = dir.join(format!("toy-{key:016x}.pcam"));
    if path.exists() {
        if let Ok(m) = load_checkpoint(&path) {
            return Ok(m);
        }
    }
    let trained = train_toy_contrastive(config)?;
    std::fs::create_dir_all(&dir)?;
    // checkpoint writer is not atomic itself, so write beside and rename
    let tmp = dir.join(format!("toy-{key:016x}.{}.tmp", std::process::id()));
    save_checkpoint(&trained.model, &tmp)?;
    std::fs::rename(&tmp, &path)?;
    write_json(&dir.join(format!("toy-{key:016x}.json")), &trained.trace)?;
    Ok(trained.model)
}

pub fn load_model(cfg: &RunConfig) -> CliResult<ContrastiveModel> {
    let spec = cfg.model.trim();
    if spec == "toy" {
        return cached_toy_model(&cfg.training);
    }
    if spec == "untrained" || spec.starts_with("untrained:") {
        let seed = match spec.split_once(':') {
            Some((_, s)) => s
                .parse()
                .map_err(|_| CliError::Input(format!("bad model seed in '{spec}'")))?,
            None => cfg.seed,
        };
        return Ok(ContrastiveModel::new(ToyModelConfig {
            init_seed: seed,
            ..cfg.training.model.clone()
        })?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Input(format!("model checkpoint {spec} not found")));
    }
    Ok(load_checkpoint(path)?)
}

/// Images to be turned into pairs along with the channel mean of the source.
enum Source {
    Corpus(ShapeCorpus),
    Images(Vec<ImageTensor>),
    Explicit(ImagePair),
}

fn png_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn parse_source(cfg: &RunConfig) -> CliResult<Source> {
    let spec = cfg.pairs.trim();
    if spec == "toy" || spec.starts_with("toy:") {
        let seed = match spec.split_once(':') {
            Some((_, s)) => s
                .parse()
                .map_err(|_| CliError::Input(format!("bad corpus seed in '{spec}'")))?,
            None => cfg.training.seed,
        };
        return Ok(Source::Corpus(ShapeCorpus::new(seed, cfg.image_side)));
    }
    if let Some((a, b)) = spec.split_once(',') {
        let pair = ImagePair::new(load_image(Path::new(a.trim()))?, load_image(Path::new(b.trim()))?)?;
        return Ok(Source::Explicit(pair));
    }
    let path = Path::new(spec);
    if path.is_dir() {
        let files = png_files(path)?;
        let images = files
            .iter()
            .take(cfg.n_pairs)
            .map(|p| load_image(p))
            .collect::<CliResult<Vec<_>>>()?;
        return Ok(Source::Images(images));
    }
    if path.is_file() {
        return Ok(Source::Images(vec![load_image(path)?]));
    }
    Err(CliError::Input(format!("pair source '{spec}' is neither toy[:SEED], a directory nor an image")))
}

fn mean_of(images: &[&ImageTensor]) -> [f32; 3] {
    let mut acc = [0.0f64; 3];
    for img in images {
        let m = img.channel_mean();
        for c in 0..3 {
            acc[c] += m[c] as f64;
        }
    }
    acc.map(|v| (v / images.len().max(1) as f64) as f32)
}

/// Evaluation pairs plus the per-channel mean of their source images.
pub struct PairSet {
    pub pairs: Vec<ImagePair>,
    pub channel_mean: [f32; 3],
    /// The unaugmented images the pairs came from (the explicit pair's first image).
    pub originals: Vec<ImageTensor>,
}

/// Up to `cfg.n_pairs` pairs; each source image is augmented into two views
/// with seed `cfg.seed + i`.
pub fn load_pairs(cfg: &RunConfig) -> CliResult<PairSet> {
    let make = |images: Vec<ImageTensor>| {
        let pairs = images
            .iter()
            .enumerate()
            .map(|(i, img)| augment_pair(img, &cfg.pair_policy, cfg.seed.wrapping_add(i as u64)))
            .collect();
        (pairs, images)
    };
    match parse_source(cfg)? {
        Source::Corpus(corpus) => {
            let images: Vec<_> = (0..cfg.n_pairs).map(|i| corpus.image(cfg.corpus_offset + i)).collect();
            let (pairs, originals) = make(images);
            Ok(PairSet {
                pairs,
                channel_mean: corpus.channel_mean(200),
                originals,
            })
        }
        Source::Images(images) => {
            let mean = mean_of(&images.iter().collect::<Vec<_>>());
            let (pairs, originals) = make(images);
            Ok(PairSet {
                pairs,
                channel_mean: mean,
                originals,
            })
        }
        Source::Explicit(pair) => {
            let mean = mean_of(&[&pair.first, &pair.second]);
            let n = cfg.n_pairs.min(1);
            let originals = vec![pair.first.clone(); n];
            Ok(PairSet {
                pairs: vec![pair; n],
                channel_mean: mean,
                originals,
            })
        }
    }
}

/// The first pair of a non-empty source.
pub fn first_pair(cfg: &RunConfig) -> CliResult<(ImagePair, ImageTensor, [f32; 3])> {
    let single = RunConfig {
        n_pairs: cfg.n_pairs.min(1),
        ..cfg.clone()
    };
    let mut set = load_pairs(&single)?;
    if set.pairs.is_empty() {
        return Err(CliError::Empty("pair source yielded no pairs".into()));
    }
    Ok((set.pairs.remove(0), set.originals.remove(0), set.channel_mean))
}
