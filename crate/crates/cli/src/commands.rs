//! The runner's commands. Each returns the paths it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayD};
use paircam_core::inversion::{invert_features, InversionConfig};
use paircam_core::methods::{Configured, Method, MethodSettings};
use paircam_core::metrics::{evaluate_metric, max_sensitivity, sanity_check, CurveConfig};
use paircam_core::model::{contrastive_margin, save_checkpoint, train_toy_contrastive};
use paircam_core::corpus::ShapeCorpus;
use paircam_core::saliency::{averaged_transforms, ExplanationPair, Normalization};
use paircam_core::transforms::{apply_transform, interpolation_schedule, TransformKind};
use paircam_core::{ContrastiveModel, Error as CoreError, ImagePair, SimilarityModel};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{tensor_to_rgb, write_atomic, write_json, write_png};
use crate::render;
use crate::report::{report_csv, summarize as summarize_reports, summary_csv, MetricKind, GROUPS, Report, ReportEntry};
use crate::sources::{first_pair, load_model, load_pairs};
use crate::tensorfile;

/// File-name friendly form of a method name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

pub fn parse_methods(cfg: &RunConfig) -> CliResult<Vec<Method>> {
    if cfg.methods.is_empty() {
        return Err(CliError::Input("no methods given".into()));
    }
    cfg.methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(CliError::from))
        .collect()
}

pub fn parse_metrics(cfg: &RunConfig) -> CliResult<Vec<MetricKind>> {
    if cfg.metrics.is_empty() {
        return Err(CliError::Input("no metrics given".into()));
    }
    cfg.metrics.iter().map(|m| MetricKind::parse(m)).collect()
}

fn config_value(cfg: &RunConfig) -> CliResult<Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn normalization_for(method: &Method) -> Normalization {
    if method.is_saliency() {
        Normalization::AbsMinmax
    } else {
        Normalization::Minmax
    }
}

fn map_tensor(map: &Array2<f32>) -> ArrayD<f32> {
    map.clone().into_dyn()
}

fn write_maps(dir: &Path, pair: &ImagePair, raw: &ExplanationPair, shown: &ExplanationPair) -> CliResult<Vec<PathBuf>> {
    let files = [
        dir.join("map1.xai"),
        dir.join("map2.xai"),
        dir.join("overlay1.png"),
        dir.join("overlay2.png"),
    ];
    tensorfile::write(&files[0], &map_tensor(&raw.map1))?;
    tensorfile::write(&files[1], &map_tensor(&raw.map2))?;
    write_png(&files[2], &render::overlay(&pair.first, &shown.map1))?;
    write_png(&files[3], &render::overlay(&pair.second, &shown.map2))?;
    Ok(files.to_vec())
}

/// Per-pair seed shared by every method and metric.
fn pair_seed(cfg: &RunConfig, i: usize) -> u64 {
    cfg.seed.wrapping_add(i as u64)
}

pub fn explain(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let methods = parse_methods(cfg)?;
    let (pair, _, _) = first_pair(cfg)?;
    let model = load_model(cfg)?;
    let settings = cfg.method_settings(pair.width());
    let mut written = Vec::new();
    let score = model.score(&pair.first, &pair.second)?;
    write_png(&cfg.out.join("image1.png"), &tensor_to_rgb(&pair.first))?;
    write_png(&cfg.out.join("image2.png"), &tensor_to_rgb(&pair.second))?;
    for method in &methods {
        let dir = cfg.out.join(slug(&method.to_string()));
        let raw = method.explain_raw(&model, &pair, &settings, cfg.seed)?;
        let shown = raw.normalized(normalization_for(method), None)?;
        let files = write_maps(&dir, &pair, &raw, &shown)?;
        let meta = json!({
            "method": method.to_string(),
            "method_info": raw.method,
            "normalization": shown.normalization,
            "score": score,
            "height": pair.height(),
            "width": pair.width(),
            "augmentation": pair.augmentation,
            "files": files.iter().map(|f| f.file_name().unwrap().to_string_lossy().to_string()).collect::<Vec<_>>(),
            "settings": settings,
            "run_config": config_value(cfg)?,
        });
        let meta_path = dir.join("meta.json");
        write_json(&meta_path, &meta)?;
        written.extend(files);
        written.push(meta_path);
    }
    Ok(written)
}

fn skippable(e: &CoreError) -> bool {
    matches!(e, CoreError::DegenerateEmbedding(_))
}

/// Runs every method on every pair and aggregates the requested metrics.
pub fn evaluate_report(cfg: &RunConfig) -> CliResult<Report> {
    let methods = parse_methods(cfg)?;
    let metrics = parse_metrics(cfg)?;
    let set = load_pairs(cfg)?;
    if set.pairs.is_empty() {
        return Err(CliError::Empty("no pairs to evaluate".into()));
    }
    let model = load_model(cfg)?;
    let settings = cfg.method_settings(set.pairs[0].width());
    let curve = CurveConfig {
        fill: cfg.deletion_fill.unwrap_or(set.channel_mean),
        ..cfg.curve.clone()
    };
    let model_name = model.name();
    let mut entries = Vec::new();
    for method in &methods {
        let mut values: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(set.pairs.len()); metrics.len()];
        for (i, pair) in set.pairs.iter().enumerate() {
            let seed = pair_seed(cfg, i);
            let explanation = match method.explain(&model, pair, &settings, seed) {
                Ok(e) => Some(e),
                Err(e) if skippable(&e) => None,
                Err(e) => return Err(e.into()),
            };
            for (k, metric) in metrics.iter().enumerate() {
                let v = match (&explanation, metric) {
                    (None, _) => None,
                    (Some(e), MetricKind::Faithfulness(m)) => {
                        match evaluate_metric(&model, pair, e, *m, &curve, cfg.drop_epsilon) {
                            Ok(v) => v.map(f64::from),
                            Err(err) if skippable(&err) => None,
                            Err(err) => return Err(err.into()),
                        }
                    }
                    (Some(_), MetricKind::MaxSensitivity) => {
                        let ex = Configured {
                            method: method.clone(),
                            settings: settings.clone(),
                            seed,
                        };
                        let r = max_sensitivity(&model, pair, &ex, cfg.sensitivity_radius, cfg.sensitivity_samples, seed)?;
                        Some(r.value as f64)
                    }
                };
                values[k].push(v);
            }
        }
        for (k, metric) in metrics.iter().enumerate() {
            let config = match metric {
                MetricKind::Faithfulness(m) if m.name().ends_with("AD") => {
                    json!({"drop_epsilon": cfg.drop_epsilon, "settings": settings, "seed": cfg.seed})
                }
                MetricKind::Faithfulness(_) => json!({"curve": curve, "settings": settings, "seed": cfg.seed}),
                MetricKind::MaxSensitivity => json!({
                    "radius": cfg.sensitivity_radius,
                    "samples": cfg.sensitivity_samples,
                    "settings": settings,
                    "seed": cfg.seed,
                }),
            };
            entries.push(ReportEntry::new(
                &model_name,
                &method.to_string(),
                *metric,
                std::mem::take(&mut values[k]),
                config,
            ));
        }
    }
    Ok(Report {
        run_config: config_value(cfg)?,
        entries,
    })
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let report = evaluate_report(cfg)?;
    let json_path = cfg.out.join("report.json");
    let csv_path = cfg.out.join("report.csv");
    write_json(&json_path, &report)?;
    write_atomic(&csv_path, report_csv(&report).as_bytes())?;
    Ok(vec![json_path, csv_path])
}

pub fn dissect(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let kind: TransformKind = cfg.transform.parse()?;
    let (_, image, _) = first_pair(cfg)?;
    let model = load_model(cfg)?;
    let settings = cfg.method_settings(image.width());
    let rho_step = match settings.averaged.scheme {
        paircam_core::saliency::AveragingScheme::Interpolation { rho_step } => rho_step,
        paircam_core::saliency::AveragingScheme::Direct { .. } => 0.1,
    };
    let target = apply_transform(&image, kind, kind.max_strength())?;
    let schedule = interpolation_schedule(&image, &target, rho_step)?;
    let scores = schedule
        .frames
        .iter()
        .map(|f| model.score(&image, f))
        .collect::<paircam_core::Result<Vec<f32>>>()?;
    let tiles = schedule
        .frames
        .iter()
        .zip(&scores)
        .map(|(f, &s)| render::with_score_bar(&render::image_tile(f), s, -1.0, 1.0))
        .collect();
    let strip_path = cfg.out.join("strip.png");
    write_png(&strip_path, &render::strip(tiles))?;
    let pair = ImagePair::new(image.clone(), image.clone())?;
    let raw = averaged_transforms(&model, &pair, kind, &settings.averaged, cfg.seed)?;
    let shown = raw.normalized(Normalization::AbsMinmax, None)?;
    let mut written = write_maps(&cfg.out, &pair, &raw, &shown)?;
    let meta_path = cfg.out.join("dissect.json");
    write_json(
        &meta_path,
        &json!({
            "transform": kind.to_string(),
            "max_strength": kind.max_strength(),
            "rhos": schedule.rhos,
            "scores": scores,
            "frames": schedule.frames.len(),
            "run_config": config_value(cfg)?,
        }),
    )?;
    written.push(strip_path);
    written.push(meta_path);
    Ok(written)
}

pub fn sanity(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let methods = parse_methods(cfg)?;
    let (pair, _, _) = first_pair(cfg)?;
    let model = load_model(cfg)?;
    let settings = cfg.method_settings(pair.width());
    let mut written = Vec::new();
    let mut summary = Vec::new();
    for method in &methods {
        let ex = Configured {
            method: method.clone(),
            settings: settings.clone(),
            seed: cfg.seed,
        };
        let trace = sanity_check(&model, &pair, &ex, cfg.sanity_stride, cfg.seed)?;
        let row1 = trace.steps.iter().map(|s| render::overlay(&pair.first, &s.maps.map1)).collect();
        let row2 = trace.steps.iter().map(|s| render::overlay(&pair.second, &s.maps.map2)).collect();
        let path = cfg.out.join(format!("sanity_{}.png", slug(&method.to_string())));
        write_png(&path, &render::grid(&[row1, row2]))?;
        written.push(path);
        summary.push(json!({
            "method": method.to_string(),
            "steps": trace.steps.iter().map(|s| json!({
                "layers_randomized": s.layers_randomized,
                "spearman1": s.spearman1,
                "spearman2": s.spearman2,
                "degenerate": s.degenerate,
            })).collect::<Vec<_>>(),
        }));
    }
    let path = cfg.out.join("sanity.json");
    write_json(&path, &json!({"methods": summary, "run_config": config_value(cfg)?}))?;
    written.push(path);
    Ok(written)
}

pub fn invert(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.layers.is_empty() {
        return Err(CliError::Input("no layers given".into()));
    }
    let (_, image, _) = first_pair(cfg)?;
    let model = load_model(cfg)?;
    let mut written = Vec::new();
    let mut results = Vec::new();
    let target_path = cfg.out.join("target.png");
    write_png(&target_path, &tensor_to_rgb(&image))?;
    written.push(target_path);
    for &layer in &cfg.layers {
        let icfg = InversionConfig {
            layer_id: layer,
            seed: cfg.seed,
            ..cfg.inversion.clone()
        };
        let r = invert_features(&model, &image, &icfg, None)?;
        let path = cfg.out.join(format!("invert_layer{layer}.png"));
        write_png(&path, &tensor_to_rgb(r.synthesized()))?;
        written.push(path);
        results.push(json!({
            "layer": layer,
            "initial_feature_mse": r.initial_feature_mse(),
            "final_feature_mse": r.final_feature_mse,
            "final_loss": r.final_loss,
            "effective_lr": r.effective_lr,
            "iterations": r.loss_trace.len(),
        }));
    }
    let path = cfg.out.join("invert.json");
    write_json(&path, &json!({"layers": results, "run_config": config_value(cfg)?}))?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchEntry {
    pub method: String,
    pub runs: Vec<f64>,
    pub mean_seconds: f64,
    pub warmup: usize,
}

pub fn bench_entries(cfg: &RunConfig, model: &ContrastiveModel, pair: &ImagePair) -> CliResult<Vec<BenchEntry>> {
    let methods = parse_methods(cfg)?;
    if cfg.bench_runs == 0 {
        return Err(CliError::Input("bench needs at least one timed run".into()));
    }
    let settings: MethodSettings = cfg.method_settings(pair.width());
    let mut out = Vec::new();
    for method in &methods {
        for _ in 0..cfg.bench_warmup {
            method.explain(model, pair, &settings, cfg.seed)?;
        }
        let runs = (0..cfg.bench_runs)
            .map(|_| {
                let t = Instant::now();
                method.explain(model, pair, &settings, cfg.seed)?;
                Ok(t.elapsed().as_secs_f64())
            })
            .collect::<CliResult<Vec<f64>>>()?;
        out.push(BenchEntry {
            method: method.to_string(),
            mean_seconds: runs.iter().sum::<f64>() / runs.len() as f64,
            runs,
            warmup: cfg.bench_warmup,
        });
    }
    Ok(out)
}

pub fn bench(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    parse_methods(cfg)?;
    let (pair, _, _) = first_pair(cfg)?;
    let model = load_model(cfg)?;
    let entries = bench_entries(cfg, &model, &pair)?;
    let path = cfg.out.join("bench.json");
    write_json(
        &path,
        &json!({
            "entries": entries,
            "height": pair.height(),
            "width": pair.width(),
            "run_config": config_value(cfg)?,
        }),
    )?;
    Ok(vec![path])
}

pub fn summarize(reports: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(CliError::Input("no reports given".into()));
    }
    let parsed = reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Report>(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rows = summarize_reports(&parsed);
    let csv_path = out.join("summary.csv");
    let json_path = out.join("summary.json");
    let png_path = out.join("summary.png");
    write_atomic(&csv_path, summary_csv(&rows).as_bytes())?;
    write_json(&json_path, &rows)?;
    let table: Vec<Vec<Option<f32>>> = rows
        .iter()
        .map(|r| {
            GROUPS
                .iter()
                .map(|(name, _, _)| r.groups.get(*name).copied().flatten().map(|v| v as f32))
                .collect()
        })
        .collect();
    write_png(&png_path, &render::heatmap_table(&table, 24))?;
    Ok(vec![csv_path, json_path, png_path])
}

pub fn train(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let tcfg = paircam_core::model::ToyTrainConfig {
        seed: cfg.seed,
        ..cfg.training.clone()
    };
    let trained = train_toy_contrastive(&tcfg)?;
    let corpus = ShapeCorpus::new(tcfg.seed, tcfg.image_side);
    let margin = contrastive_margin(&trained.model, &corpus, cfg.corpus_offset, 100, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out)?;
    let model_path = cfg.out.join("model.pcam");
    let tmp = cfg.out.join(format!(".model.pcam.{}.tmp", std::process::id()));
    save_checkpoint(&trained.model, &tmp)?;
    std::fs::rename(&tmp, &model_path)?;
    let path = cfg.out.join("training.json");
    write_json(
        &path,
        &json!({
            "trace": trained.trace,
            "margin": margin,
            "training": tcfg,
            "run_config": config_value(cfg)?,
        }),
    )?;
    Ok(vec![model_path, path])
}
