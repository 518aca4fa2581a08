//! Procedural shape images: coloured geometric shapes on textured
//! backgrounds, fully determined by `(seed, index)`.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
}

const CLASSES: [ShapeClass; 5] = [
    ShapeClass::Disc,
    ShapeClass::Square,
    ShapeClass::Triangle,
    ShapeClass::Cross,
    ShapeClass::Ring,
];

#[derive(Debug, Clone)]
pub struct ShapeSample {
    pub image: ImageTensor,
    /// 1 on foreground pixels, 0 on background.
    pub mask: Array2<f32>,
    pub shapes: Vec<ShapeClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeCorpus {
    pub seed: u64,
    pub side: usize,
}

fn random_colour<R: Rng>(rng: &mut R, saturated: bool) -> [f32; 3] {
    if saturated {
        let hue = rng.random::<f32>();
        let v = rng.random_range(0.7..1.0);
        let s = rng.random_range(0.6..1.0);
        let h6 = hue * 6.0;
        let f = h6 - h6.floor();
        let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
        match h6 as i32 % 6 {
            0 => [v, t, p],
            1 => [q, v, p],
            2 => [p, v, t],
            3 => [p, q, v],
            4 => [t, p, v],
            _ => [v, p, q],
        }
    } else {
        let base = rng.random_range(0.15..0.55);
        [
            (base + rng.random_range(-0.1..0.1f32)).clamp(0.0, 1.0),
            (base + rng.random_range(-0.1..0.1f32)).clamp(0.0, 1.0),
            (base + rng.random_range(-0.1..0.1f32)).clamp(0.0, 1.0),
        ]
    }
}

fn inside(class: ShapeClass, dy: f32, dx: f32, r: f32, rot: f32) -> bool {
    let (s, c) = rot.sin_cos();
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    match class {
        ShapeClass::Disc => u * u + v * v <= r * r,
        ShapeClass::Square => u.abs() <= 0.8 * r && v.abs() <= 0.8 * r,
        ShapeClass::Triangle => {
            let h = r * 1.5;
            let vv = v + 0.5 * r;
            vv <= 0.5 * r && vv >= -h + 0.5 * r && u.abs() <= (0.5 * r - vv) / h * r * 1.1
        }
        ShapeClass::Cross => {
            (u.abs() <= 0.3 * r && v.abs() <= r) || (v.abs() <= 0.3 * r && u.abs() <= r)
        }
        ShapeClass::Ring => {
            let d2 = u * u + v * v;
            d2 <= r * r && d2 >= 0.45 * r * r
        }
    }
}

impl ShapeCorpus {
    pub fn new(seed: u64, side: usize) -> Self {
        Self { seed, side }
    }

    pub fn image(&self, index: usize) -> ImageTensor {
        self.sample(index).image
    }

    pub fn sample(&self, index: usize) -> ShapeSample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let n = self.side;
        let nf = n as f32;

        let c0 = random_colour(&mut rng, false);
        let c1 = random_colour(&mut rng, false);
        let angle = rng.random::<f32>() * std::f32::consts::TAU;
        let (ga, gb) = (angle.cos(), angle.sin());
        let freq = rng.random_range(0.2..0.9f32);
        let tex_angle = rng.random::<f32>() * std::f32::consts::PI;
        let (ta, tb) = (tex_angle.cos(), tex_angle.sin());
        let tex_amp = rng.random_range(0.02..0.08f32);

        let mut data = Array3::<f32>::zeros((3, n, n));
        for y in 0..n {
            for x in 0..n {
                let py = y as f32 / nf - 0.5;
                let px = x as f32 / nf - 0.5;
                let t = (ga * px + gb * py + 0.71) / 1.42;
                let stripe = tex_amp * (freq * (ta * x as f32 + tb * y as f32)).sin();
                for ch in 0..3 {
                    let noise = rng.random_range(-0.03..0.03f32);
                    data[[ch, y, x]] = (c0[ch] * (1.0 - t) + c1[ch] * t + stripe + noise).clamp(0.0, 1.0);
                }
            }
        }

        let mut mask = Array2::<f32>::zeros((n, n));
        let count = if rng.random::<f32>() < 0.3 { 2 } else { 1 };
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let class = CLASSES[rng.random_range(0..CLASSES.len())];
            let colour = random_colour(&mut rng, true);
            let r = nf * rng.random_range(0.14..0.24f32);
            let cy = rng.random_range(r..nf - r);
            let cx = rng.random_range(r..nf - r);
            let rot = rng.random::<f32>() * std::f32::consts::TAU;
            let shade = rng.random_range(0.0..0.15f32);
            for y in 0..n {
                for x in 0..n {
                    let dy = y as f32 - cy;
                    let dx = x as f32 - cx;
                    if inside(class, dy, dx, r, rot) {
                        let fall = 1.0 - shade * (dy / r);
                        for ch in 0..3 {
                            data[[ch, y, x]] = (colour[ch] * fall).clamp(0.0, 1.0);
                        }
                        mask[[y, x]] = 1.0;
                    }
                }
            }
            shapes.push(class);
        }

        let image = ImageTensor::new(data)
            .expect("generated pixels are finite")
            .with_source(format!("shapes:{}:{}", self.seed, index));
        ShapeSample { image, mask, shapes }
    }

    /// Per-channel mean over the first `count` images.
    pub fn channel_mean(&self, count: usize) -> [f32; 3] {
        let mut acc = [0.0f64; 3];
        for i in 0..count.max(1) {
            let m = self.image(i).channel_mean();
            for c in 0..3 {
                acc[c] += m[c] as f64;
            }
        }
        acc.map(|v| (v / count.max(1) as f64) as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let c = ShapeCorpus::new(3, 32);
        assert_eq!(c.image(5), c.image(5));
        assert_ne!(c.image(5), c.image(6));
        let s = c.sample(2);
        s.image.check_unit_range().unwrap();
        assert!(s.mask.sum() > 10.0);
        assert!(s.mask.sum() < 32.0 * 32.0 * 0.7);
    }
}
