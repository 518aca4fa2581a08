//! Identical-input symmetry and degenerate configurations.

use ndarray::{Array1, Array2};
use paircam_core::cam::*;
use paircam_core::corpus::ShapeCorpus;
use paircam_core::methods::{Method, MethodSettings};
use paircam_core::metrics::max_sensitivity;
use paircam_core::model::ToyModelConfig;
use paircam_core::saliency::*;
use paircam_core::transforms::{apply_transform, TransformKind};
use paircam_core::{ContrastiveModel, ImagePair, SimilarityModel};

fn model() -> ContrastiveModel {
    ContrastiveModel::new(ToyModelConfig {
        init_seed: 5,
        ..Default::default()
    })
    .unwrap()
}

fn same_pair(i: usize) -> ImagePair {
    let img = ShapeCorpus::new(4, 32).image(i);
    ImagePair::new(img.clone(), img).unwrap()
}

fn assert_maps_close(a: &Array2<f32>, b: &Array2<f32>, tol: f32, what: &str) {
    assert_eq!(a.dim(), b.dim(), "{what}");
    let worst = a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
    assert!(worst <= tol, "{what}: max difference {worst}");
}

#[test]
fn identical_inputs_give_identical_maps() {
    let m = model();
    let settings = MethodSettings {
        averaged: AveragedOptions {
            symmetric: true,
            ..Default::default()
        },
        ..MethodSettings::for_side(32)
    };
    let mut names = vec![
        "input-x-grad".to_string(),
        "guided-input-x-grad".into(),
        "avg-transforms/gaussian_blur".into(),
        "avg-transforms/color_jitter".into(),
        "grad-cam-baseline".into(),
        "deep-sim".into(),
    ];
    for r in ["mean", "max", "attn"] {
        for gi in ["gi", "nogi"] {
            names.push(format!("int-cam/{r}/{gi}"));
        }
    }
    for i in 0..3 {
        let pair = same_pair(i);
        for name in &names {
            let method: Method = name.parse().unwrap();
            let e = method.explain_raw(&m, &pair, &settings, 0).unwrap();
            let scale = e.map1.iter().fold(0.0f32, |a, v| a.max(v.abs())).max(1e-12);
            // raw maps compared relative to their magnitude, normalized maps absolutely
            assert_maps_close(&(e.map1.mapv(|v| v / scale)), &(e.map2.mapv(|v| v / scale)), 1e-5, name);
            let n = method.explain(&m, &pair, &settings, 0).unwrap();
            assert_maps_close(&n.map1, &n.map2, 1e-5, name);
        }
    }
}

#[test]
fn single_strength_averaging_is_input_x_gradient() {
    let m = model();
    let pair = ImagePair::new(ShapeCorpus::new(1, 32).image(0), ShapeCorpus::new(1, 32).image(1)).unwrap();
    let opts = AveragedOptions {
        scheme: AveragingScheme::Direct { z: 1 },
        ..Default::default()
    };
    let kind = TransformKind::GaussianBlur;
    let at = averaged_transforms(&m, &pair, kind, &opts, 0).unwrap();
    let transformed = ImagePair::new(
        pair.first.clone(),
        apply_transform(&pair.second, kind, kind.max_strength()).unwrap(),
    )
    .unwrap();
    let ixg = input_x_gradient(&m, &transformed).unwrap();
    assert_eq!(at.map1, ixg.map1);

    let id = averaged_transforms(&m, &pair, TransformKind::Identity, &opts, 0).unwrap();
    let plain = input_x_gradient(&m, &pair).unwrap();
    assert_eq!(id.map1, plain.map1);
    assert_eq!(id.map2, plain.map2);
}

#[test]
fn noiseless_single_sample_smooth_grad_is_input_x_gradient() {
    let m = model();
    let pair = ImagePair::new(ShapeCorpus::new(1, 32).image(2), ShapeCorpus::new(1, 32).image(3)).unwrap();
    let sg = smooth_grad(&m, &pair, 1, 0.0, 9).unwrap();
    let ixg = input_x_gradient(&m, &pair).unwrap();
    assert_eq!(sg.map1, ixg.map1);
    assert_eq!(sg.map2, ixg.map2);
}

#[test]
fn unit_joint_activation_without_interaction_sums_channels() {
    let m = model();
    let pair = ImagePair::new(ShapeCorpus::new(1, 32).image(4), ShapeCorpus::new(1, 32).image(5)).unwrap();
    let c = cam_intermediates(&m, &pair, Reduction::Mean).unwrap();
    let ones = Array1::ones(c.j.len());
    let (m1, m2) = interaction_cam_maps(&c.a1, &c.a2, &ones, None, None).unwrap();
    let s1 = c.a1.sum_axis(ndarray::Axis(0));
    let s2 = c.a2.sum_axis(ndarray::Axis(0));
    assert_maps_close(&m1, &s1, 1e-5, "map1");
    assert_maps_close(&m2, &s2, 1e-5, "map2");
}

#[test]
fn constant_explainer_and_zero_radius_have_no_sensitivity() {
    let m = model();
    let pair = ImagePair::new(ShapeCorpus::new(1, 32).image(6), ShapeCorpus::new(1, 32).image(7)).unwrap();
    let constant = |_: &dyn SimilarityModel, p: &ImagePair| {
        let map = Array2::from_elem((p.height(), p.width()), 0.5f32);
        ExplanationPair::new(map.clone(), map, MethodInfo::new("constant", serde_json::json!({})))
    };
    let r = max_sensitivity(&m, &pair, &constant, 0.1, 8, 1).unwrap();
    assert_eq!(r.value, 0.0);
    let ixg = |model: &dyn SimilarityModel, p: &ImagePair| input_x_gradient(model, p);
    let r = max_sensitivity(&m, &pair, &ixg, 0.0, 5, 1).unwrap();
    assert_eq!(r.value, 0.0);
}
