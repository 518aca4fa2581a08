//! Perturbation methods and curves against an analytic overlap model with
//! a planted shared patch.

use ndarray::{Array2, Array3};
use paircam_core::metrics::{insertion_deletion_curve, CurveConfig, CurveMode};
use paircam_core::model::stubs::{LinearStub, OverlapStub};
use paircam_core::perturbation::*;
use paircam_core::saliency::{input_x_gradient, ExplanationPair, MethodInfo};
use paircam_core::{ImagePair, ImageTensor, SimilarityModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 32;
const PATCH: Rect = Rect {
    top: 10,
    left: 12,
    height: 10,
    width: 10,
};

/// Dim independent noise in each image plus a bright patch at the same place.
fn planted_pair(seed: u64) -> ImagePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = || {
        let data = Array3::from_shape_fn((3, SIDE, SIDE), |(c, y, x)| {
            if PATCH.contains(y, x) {
                0.9 - 0.1 * c as f32
            } else {
                rng.random_range(0.0..0.15f32)
            }
        });
        ImageTensor::new(data).unwrap()
    };
    let a = make();
    let b = make();
    ImagePair::new(a, b).unwrap()
}

fn patch_mask() -> Array2<f32> {
    Array2::from_shape_fn((SIDE, SIDE), |(y, x)| if PATCH.contains(y, x) { 1.0 } else { 0.0 })
}

fn region_means(map: &Array2<f32>) -> (f64, f64) {
    let (mut inside, mut outside, mut n_in, mut n_out) = (0.0, 0.0, 0usize, 0usize);
    for ((y, x), &v) in map.indexed_iter() {
        if PATCH.contains(y, x) {
            inside += v as f64;
            n_in += 1;
        } else {
            outside += v as f64;
            n_out += 1;
        }
    }
    (inside / n_in as f64, outside / n_out as f64)
}

#[test]
fn conditional_occlusion_matches_brute_force() {
    let model = OverlapStub::new(4);
    let pair = planted_pair(1);
    let cfg = OcclusionConfig {
        mask_size: 8,
        stride: 4,
        fill: Fill::Zero,
        ..OcclusionConfig::default()
    };
    let (e, d) = conditional_occlusion_detailed(&model, &pair, &cfg).unwrap();
    let windows = sliding_windows(SIDE, SIDE, 8, 4);
    assert_eq!(d.windows, windows);
    let s = model.score(&pair.first, &pair.second).unwrap();
    assert_eq!(d.base_score, s);
    for (which, drops, map) in [(0, &d.drops1, &e.map1), (1, &d.drops2, &e.map2)] {
        let mut acc = Array2::<f64>::zeros((SIDE, SIDE));
        let mut count = Array2::<f64>::zeros((SIDE, SIDE));
        for (i, &r) in windows.iter().enumerate() {
            let drop = if which == 0 {
                s - model.score(&occlude(&pair.first, r, Fill::Zero), &pair.second).unwrap()
            } else {
                s - model.score(&pair.first, &occlude(&pair.second, r, Fill::Zero)).unwrap()
            };
            assert_eq!(drops[i], drop, "window {i} of image {which}");
            for y in r.top..r.top + r.height {
                for x in r.left..r.left + r.width {
                    acc[[y, x]] += drop as f64;
                    count[[y, x]] += 1.0;
                }
            }
        }
        let expected = ndarray::Zip::from(&acc)
            .and(&count)
            .map_collect(|&a, &c| if c > 0.0 { (a / c) as f32 } else { 0.0 });
        assert_eq!(map, &expected);
        let (inside, outside) = region_means(map);
        assert!(inside > outside, "patch {inside} vs background {outside}");
    }
}

#[test]
fn oracle_ranking_beats_random_rankings_at_insertion() {
    let model = OverlapStub::new(4);
    let pair = planted_pair(2);
    let cfg = CurveConfig::default();
    let info = MethodInfo::new("oracle", serde_json::json!({}));
    let oracle = ExplanationPair::new(patch_mask(), patch_mask(), info).unwrap();
    let oracle_auc = insertion_deletion_curve(&model, &pair, &oracle, CurveMode::SI, &cfg)
        .unwrap()
        .auc;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0.0;
    for _ in 0..20 {
        let mut order: Vec<f32> = (0..SIDE * SIDE).map(|i| i as f32).collect();
        order.shuffle(&mut rng);
        let m1 = Array2::from_shape_vec((SIDE, SIDE), order.clone()).unwrap();
        order.shuffle(&mut rng);
        let m2 = Array2::from_shape_vec((SIDE, SIDE), order).unwrap();
        let random = ExplanationPair::new(m1, m2, MethodInfo::new("random", serde_json::json!({}))).unwrap();
        total += insertion_deletion_curve(&model, &pair, &random, CurveMode::SI, &cfg)
            .unwrap()
            .auc;
    }
    let mean = total / 20.0;
    assert!(oracle_auc > mean, "oracle {oracle_auc} vs random mean {mean}");
}

#[test]
fn pairwise_occlusion_concentrates_on_the_patch() {
    let model = OverlapStub::new(4);
    let pair = planted_pair(3);
    let cfg = OcclusionConfig {
        n_masks: 10_000,
        fill: Fill::Zero,
        seed: 17,
        ..OcclusionConfig::scaled_for(SIDE)
    };
    let (e, d) = pairwise_occlusion_detailed(&model, &pair, &cfg).unwrap();
    assert_eq!(d.forward_passes, 10_000);
    for map in [&e.map1, &e.map2] {
        let (inside, outside) = region_means(map);
        assert!(inside >= 1.5 * outside, "patch {inside} vs background {outside}");
    }
}

#[test]
fn sampled_mask_areas_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let total = (SIDE * SIDE) as f32;
    let mut bins = [0usize; 4];
    for _ in 0..2000 {
        let r = sample_occlusion_mask(SIDE, SIDE, (0.10, 0.30), (0.5, 2.0), &mut rng).unwrap();
        assert!(r.top + r.height <= SIDE && r.left + r.width <= SIDE);
        let frac = r.area() as f32 / total;
        // rounding of the sides moves the area by at most one row and column
        let slack = (r.height + r.width + 1) as f32 / total;
        assert!(frac >= 0.10 - slack && frac <= 0.30 + slack, "{frac}");
        let bin = (((frac - 0.10) / 0.05).floor().clamp(0.0, 3.0)) as usize;
        bins[bin] += 1;
    }
    // roughly uniform over the four bins
    assert!(bins.iter().all(|&b| b > 300), "{bins:?}");
}

#[test]
fn linear_stub_sensitivity_respects_the_lipschitz_bound() {
    let model = LinearStub::random(8, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut img = || ImageTensor::new(Array3::from_shape_fn((3, 8, 8), |_| rng.random::<f32>())).unwrap();
    let pair = ImagePair::new(img(), img()).unwrap();
    let base = input_x_gradient(&model, &pair).unwrap();
    let radius = 0.05f32;
    // each map pixel moves by at most radius * sum_c |w_c| in either image
    let per_pixel: f64 = (0..8usize)
        .flat_map(|y| (0..8).map(move |x| (y, x)))
        .map(|(y, x)| {
            let s: f64 = (0..3).map(|c| model.weights[[c, y, x]].abs() as f64).sum();
            s * s
        })
        .sum();
    let base_norm = base
        .map1
        .iter()
        .chain(base.map2.iter())
        .map(|v| (*v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let bound = radius as f64 * (2.0f64 * per_pixel).sqrt() / base_norm;
    let ixg = |m: &dyn SimilarityModel, p: &ImagePair| input_x_gradient(m, p);
    let r = paircam_core::metrics::max_sensitivity(&model, &pair, &ixg, radius, 50, 2).unwrap();
    assert!(r.value > 0.0);
    assert!(r.value as f64 <= bound * (1.0 + 1e-5), "{} > {bound}", r.value);
    assert!(r.running_max.windows(2).all(|w| w[0] <= w[1]));
}
