//! Curve endpoints, AUC conventions, rank invariance and protocol defaults.

use ndarray::Array2;
use paircam_core::corpus::ShapeCorpus;
use paircam_core::metrics::*;
use paircam_core::model::ToyModelConfig;
use paircam_core::perturbation::{pairwise_occlusion_detailed, sliding_windows, OcclusionConfig};
use paircam_core::saliency::{ExplanationPair, MethodInfo};
use paircam_core::transforms::gaussian_blur;
use paircam_core::{ContrastiveModel, ImagePair, ImageTensor, SimilarityModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> ContrastiveModel {
    ContrastiveModel::new(ToyModelConfig {
        init_seed: 8,
        ..Default::default()
    })
    .unwrap()
}

fn pair(i: usize) -> ImagePair {
    let c = ShapeCorpus::new(6, 32);
    ImagePair::new(c.image(2 * i), c.image(2 * i + 1)).unwrap()
}

fn random_maps(seed: u64, h: usize, w: usize) -> ExplanationPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m1 = Array2::from_shape_fn((h, w), |_| rng.random::<f32>());
    let m2 = Array2::from_shape_fn((h, w), |_| rng.random::<f32>());
    ExplanationPair::new(m1, m2, MethodInfo::new("random", serde_json::json!({}))).unwrap()
}

fn blurred(img: &ImageTensor, cfg: &CurveConfig) -> ImageTensor {
    ImageTensor::new(gaussian_blur(img.data(), cfg.blur_sigma, Some(cfg.blur_radius))).unwrap()
}

#[test]
fn curve_endpoints_match_direct_scores() {
    let m = model();
    let p = pair(0);
    let e = random_maps(1, 32, 32);
    let cfg = CurveConfig {
        fill: [0.3, 0.4, 0.5],
        ..Default::default()
    };
    let s = m.score(&p.first, &p.second).unwrap();
    let (b1, b2) = (blurred(&p.first, &cfg), blurred(&p.second, &cfg));
    let filled = ImageTensor::filled(32, 32, cfg.fill);
    let close = |a: f32, b: f32| (a - b).abs() <= 1e-5;

    let si = insertion_deletion_curve(&m, &p, &e, CurveMode::SI, &cfg).unwrap();
    let c = &si.curves[0];
    assert!(close(c.scores[0], m.score(&b1, &b2).unwrap()));
    assert!(close(*c.scores.last().unwrap(), s));
    assert_eq!(c.fractions[0], 0.0);
    assert_eq!(*c.fractions.last().unwrap(), 1.0);

    let sd = insertion_deletion_curve(&m, &p, &e, CurveMode::SD, &cfg).unwrap();
    let c = &sd.curves[0];
    assert!(close(c.scores[0], s));
    assert!(close(*c.scores.last().unwrap(), m.score(&filled, &filled).unwrap()));

    let ci = insertion_deletion_curve(&m, &p, &e, CurveMode::CI, &cfg).unwrap();
    assert_eq!(ci.curves.len(), 2);
    assert!(close(ci.curves[0].scores[0], m.score(&b1, &p.second).unwrap()));
    assert!(close(ci.curves[1].scores[0], m.score(&p.first, &b2).unwrap()));
    for c in &ci.curves {
        assert!(close(*c.scores.last().unwrap(), s));
    }
    assert!((ci.auc - (ci.curves[0].auc + ci.curves[1].auc) / 2.0).abs() < 1e-6);

    let cd = insertion_deletion_curve(&m, &p, &e, CurveMode::CD, &cfg).unwrap();
    assert!(close(*cd.curves[0].scores.last().unwrap(), m.score(&filled, &p.second).unwrap()));
    assert!(close(*cd.curves[1].scores.last().unwrap(), m.score(&p.first, &filled).unwrap()));
}

#[test]
fn step_count_follows_pixels_per_step() {
    let m = model();
    let p = pair(1);
    let e = random_maps(2, 32, 32);
    let c = insertion_deletion_curve(&m, &p, &e, CurveMode::SI, &CurveConfig::default()).unwrap();
    assert_eq!(c.curves[0].scores.len(), 32 + 1);
    let cfg = CurveConfig {
        pixels_per_step: Some(100),
        ..Default::default()
    };
    let c = insertion_deletion_curve(&m, &p, &e, CurveMode::SD, &cfg).unwrap();
    assert_eq!(c.curves[0].scores.len(), 1024usize.div_ceil(100) + 1);
}

#[test]
fn protocol_defaults() {
    assert_eq!(CurveConfig::default().step_for(224), 224);
    let occ = OcclusionConfig::default();
    assert_eq!((occ.mask_size, occ.stride), (64, 8));
    assert_eq!(sliding_windows(224, 224, occ.mask_size, occ.stride).len(), 441);
    assert_eq!(occ.n_masks, 100);
    assert_eq!(occ.scale_range, (0.10, 0.30));
}

#[test]
fn pairwise_weights_sum_to_one() {
    let m = model();
    for i in 0..3 {
        let (_, d) = pairwise_occlusion_detailed(&m, &pair(i), &OcclusionConfig::scaled_for(32)).unwrap();
        let total: f64 = d.weights.iter().sum();
        assert!((total - 1.0).abs() <= 1e-6, "{total}");
        assert_eq!(d.weights.len(), 100);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flat_curve_area_is_the_constant(c in -1.0f32..1.0, n in 2usize..60) {
        let xs: Vec<f32> = (0..n).map(|i| i as f32 / (n - 1) as f32).collect();
        let ys = vec![c; n];
        prop_assert!((auc(&xs, &ys).unwrap() - c).abs() <= 1e-6);
    }

    #[test]
    fn ranking_is_invariant_to_monotone_transforms(levels in proptest::collection::vec(0u8..64, 64)) {
        let map = Array2::from_shape_fn((8, 8), |(y, x)| levels[y * 8 + x] as f32 / 64.0);
        let r = pixel_ranking(&map);
        prop_assert_eq!(&r, &pixel_ranking(&map.mapv(|v| 3.0 * v + 0.25)));
        prop_assert_eq!(&r, &pixel_ranking(&map.mapv(f32::exp)));
    }
}

#[test]
fn curves_are_invariant_to_monotone_map_transforms() {
    let m = model();
    let p = pair(2);
    let levels = random_maps(3, 32, 32);
    let q = |v: f32| (v * 50.0).floor() / 50.0;
    let e = ExplanationPair::new(levels.map1.mapv(q), levels.map2.mapv(q), levels.method.clone()).unwrap();
    let t = ExplanationPair::new(e.map1.mapv(|v| v.exp() * 2.0), e.map2.mapv(|v| v.powi(3)), e.method.clone()).unwrap();
    for mode in [CurveMode::SI, CurveMode::SD, CurveMode::CI, CurveMode::CD] {
        let a = insertion_deletion_curve(&m, &p, &e, mode, &CurveConfig::default()).unwrap();
        let b = insertion_deletion_curve(&m, &p, &t, mode, &CurveConfig::default()).unwrap();
        assert_eq!(a, b, "{mode:?}");
    }
}

#[test]
fn average_drop_skips_low_base_scores() {
    let m = model();
    let p = pair(3);
    let ones = Array2::ones((32, 32));
    let e = ExplanationPair::new(ones.clone(), ones, MethodInfo::new("ones", serde_json::json!({}))).unwrap();
    let full = average_drop(&m, &p, &e, DropMode::SAD, DEFAULT_DROP_EPSILON).unwrap();
    if let Some(d) = full.drop {
        assert!(d.abs() < 1e-5, "full mask keeps the score: {d}");
    }
    let guard = average_drop(&m, &p, &e, DropMode::CAD, 2.0).unwrap();
    assert!(guard.skipped());
}
