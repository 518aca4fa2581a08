use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{BackpropMode, RectifierTrace};

/// 3x3 convolution with zero padding of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_channels, in_channels, 3, 3)`
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
    pub stride: usize,
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out_features, in_features)`
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

/// One named parameter group of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Linear(Linear),
}

const KERNEL: usize = 3;

/// Output positions `ox` whose input column `ox * stride + k - 1` is in bounds.
fn valid_range(out_len: usize, in_len: usize, stride: usize, k: usize) -> std::ops::Range<usize> {
    let mut lo = 0;
    while lo < out_len && lo * stride + k < 1 {
        lo += 1;
    }
    let mut hi = out_len;
    while hi > lo && (hi - 1) * stride + k >= in_len + 1 {
        hi -= 1;
    }
    lo..hi
}

fn he_normal<R: Rng>(fan_in: usize, rng: &mut R, n: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

impl Conv2d {
    pub fn he_init<R: Rng>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_channels * KERNEL * KERNEL;
        let w = he_normal(fan_in, rng, out_channels * fan_in);
        Self {
            weight: Array4::from_shape_vec((out_channels, in_channels, KERNEL, KERNEL), w)
                .expect("shape"),
            bias: Array1::zeros(out_channels),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 - KERNEL) / self.stride + 1, (w + 2 - KERNEL) / self.stride + 1)
    }

    pub fn forward(&self, input: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = input.dim();
        debug_assert_eq!(c, self.in_channels());
        let (oh, ow) = self.output_size(h, w);
        let oc_n = self.out_channels();
        let s = self.stride;
        let inp = input.as_slice().expect("contiguous input");
        let wt = self.weight.as_slice().expect("contiguous weight");
        let mut out = vec![0.0f32; oc_n * oh * ow];
        let col_ranges: Vec<_> = (0..KERNEL).map(|kx| valid_range(ow, w, s, kx)).collect();
        let row_ranges: Vec<_> = (0..KERNEL).map(|ky| valid_range(oh, h, s, ky)).collect();
        for oc in 0..oc_n {
            let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            out_plane.fill(self.bias[oc]);
            for ic in 0..c {
                let in_plane = &inp[ic * h * w..(ic + 1) * h * w];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = wt[((oc * c + ic) * KERNEL + ky) * KERNEL + kx];
                        let cols = col_ranges[kx].clone();
                        for oy in row_ranges[ky].clone() {
                            let iy = oy * s + ky - 1;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let off = kx as isize - 1;
                                for ox in cols.clone() {
                                    out_row[ox] += wv * in_row[(ox as isize + off) as usize];
                                }
                            } else {
                                for ox in cols.clone() {
                                    out_row[ox] += wv * in_row[ox * s + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((oc_n, oh, ow), out).expect("shape")
    }

    /// Backward pass. Returns the input gradient when `need_input` is set and
    /// accumulates parameter gradients into `grads` when given.
    pub fn backward(
        &self,
        input: &Array3<f32>,
        grad_out: &Array3<f32>,
        need_input: bool,
        grads: Option<(&mut [f32], &mut [f32])>,
    ) -> Option<Array3<f32>> {
        let (c, h, w) = input.dim();
        let (oc_n, oh, ow) = grad_out.dim();
        let s = self.stride;
        let inp = input.as_slice().expect("contiguous input");
        let go = grad_out.as_slice().expect("contiguous grad");
        let wt = self.weight.as_slice().expect("contiguous weight");
        let mut gin = if need_input {
            vec![0.0f32; c * h * w]
        } else {
            Vec::new()
        };
        let col_ranges: Vec<_> = (0..KERNEL).map(|kx| valid_range(ow, w, s, kx)).collect();
        let row_ranges: Vec<_> = (0..KERNEL).map(|ky| valid_range(oh, h, s, ky)).collect();
        let (mut gw, mut gb) = match grads {
            Some((gw, gb)) => (Some(gw), Some(gb)),
            None => (None, None),
        };
        for oc in 0..oc_n {
            let go_plane = &go[oc * oh * ow..(oc + 1) * oh * ow];
            if let Some(gb) = gb.as_deref_mut() {
                gb[oc] += go_plane.iter().sum::<f32>();
            }
            for ic in 0..c {
                let in_plane = &inp[ic * h * w..(ic + 1) * h * w];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let widx = ((oc * c + ic) * KERNEL + ky) * KERNEL + kx;
                        let wv = wt[widx];
                        let cols = col_ranges[kx].clone();
                        let mut acc = 0.0f32;
                        for oy in row_ranges[ky].clone() {
                            let iy = oy * s + ky - 1;
                            let go_row = &go_plane[oy * ow..(oy + 1) * ow];
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            if gw.is_some() {
                                for ox in cols.clone() {
                                    acc += in_row[ox * s + kx - 1] * go_row[ox];
                                }
                            }
                            if need_input {
                                let gi_row = &mut gin[ic * h * w + iy * w..ic * h * w + (iy + 1) * w];
                                for ox in cols.clone() {
                                    gi_row[ox * s + kx - 1] += wv * go_row[ox];
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        need_input.then(|| Array3::from_shape_vec((c, h, w), gin).expect("shape"))
    }
}

impl Linear {
    pub fn he_init<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let w = he_normal(in_features, rng, in_features * out_features);
        Self {
            weight: Array2::from_shape_vec((out_features, in_features), w).expect("shape"),
            bias: Array1::zeros(out_features),
        }
    }

    pub fn forward(&self, x: &Array1<f32>) -> Array1<f32> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(
        &self,
        x: &Array1<f32>,
        grad_out: &Array1<f32>,
        grads: Option<(&mut [f32], &mut [f32])>,
    ) -> Array1<f32> {
        if let Some((gw, gb)) = grads {
            let n_in = x.len();
            for (o, &g) in grad_out.iter().enumerate() {
                gb[o] += g;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (r, &xv) in row.iter_mut().zip(x.iter()) {
                    *r += g * xv;
                }
            }
        }
        self.weight.t().dot(grad_out)
    }
}

impl Layer {
    pub fn weight_slice(&self) -> &[f32] {
        match self {
            Layer::Conv(c) => c.weight.as_slice().expect("contiguous"),
            Layer::Linear(l) => l.weight.as_slice().expect("contiguous"),
        }
    }

    pub fn weight_slice_mut(&mut self) -> &mut [f32] {
        match self {
            Layer::Conv(c) => c.weight.as_slice_mut().expect("contiguous"),
            Layer::Linear(l) => l.weight.as_slice_mut().expect("contiguous"),
        }
    }

    pub fn bias_slice(&self) -> &[f32] {
        match self {
            Layer::Conv(c) => c.bias.as_slice().expect("contiguous"),
            Layer::Linear(l) => l.bias.as_slice().expect("contiguous"),
        }
    }

    pub fn bias_slice_mut(&mut self) -> &mut [f32] {
        match self {
            Layer::Conv(c) => c.bias.as_slice_mut().expect("contiguous"),
            Layer::Linear(l) => l.bias.as_slice_mut().expect("contiguous"),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            Layer::Conv(c) => c.in_channels() * KERNEL * KERNEL,
            Layer::Linear(l) => l.weight.dim().1,
        }
    }

    /// Re-draws weights from the He-normal initializer and zeroes biases.
    pub fn reinitialize<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.fan_in();
        let n = self.weight_slice().len();
        let fresh = he_normal(fan_in, rng, n);
        self.weight_slice_mut().copy_from_slice(&fresh);
        self.bias_slice_mut().fill(0.0);
    }
}

/// Rectifier backward rule. `activated` is the forward output; a unit is
/// open where it is positive. Guided mode also closes units whose upstream
/// gradient is negative.
pub(crate) fn relu_backward_3d(
    activated: &Array3<f32>,
    grad: &mut Array3<f32>,
    mode: BackpropMode,
    trace: &mut RectifierTrace,
) {
    let mut local = RectifierTrace {
        rectifiers: 1,
        negative_propagated: 0,
    };
    for (g, &a) in grad.iter_mut().zip(activated.iter()) {
        *g = relu_rule(a, *g, mode);
        if *g < 0.0 {
            local.negative_propagated += 1;
        }
    }
    trace.merge(local);
}

pub(crate) fn relu_backward_1d(
    activated: &Array1<f32>,
    grad: &mut Array1<f32>,
    mode: BackpropMode,
    trace: &mut RectifierTrace,
) {
    let mut local = RectifierTrace {
        rectifiers: 1,
        negative_propagated: 0,
    };
    for (g, &a) in grad.iter_mut().zip(activated.iter()) {
        *g = relu_rule(a, *g, mode);
        if *g < 0.0 {
            local.negative_propagated += 1;
        }
    }
    trace.merge(local);
}

#[inline]
fn relu_rule(activated: f32, upstream: f32, mode: BackpropMode) -> f32 {
    let open = activated > 0.0 && (mode == BackpropMode::Standard || upstream > 0.0);
    if open {
        upstream
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of cross-correlation with zero padding.
    fn conv_reference(conv: &Conv2d, x: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = x.dim();
        let (oh, ow) = conv.output_size(h, w);
        let mut out = Array3::zeros((conv.out_channels(), oh, ow));
        for oc in 0..conv.out_channels() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * conv.stride + ky) as isize - 1;
                                let ix = (ox * conv.stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += conv.weight[[oc, ic, ky, kx]] as f64
                                        * x[[ic, iy as usize, ix as usize]] as f64;
                                }
                            }
                        }
                    }
                    out[[oc, oy, ox]] = acc as f32;
                }
            }
        }
        out
    }

    fn random_input(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f32> {
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &stride in &[1, 2] {
            let mut conv = Conv2d::he_init(3, 4, stride, &mut rng);
            conv.bias = Array1::from_shape_fn(4, |i| i as f32 * 0.1);
            let x = random_input(&mut rng, 3, 8, 6);
            let got = conv.forward(&x);
            let want = conv_reference(&conv, &x);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x) - b, y> = <x, conv^T(y)> and the weight gradient is linear in x.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &stride in &[1, 2] {
            let conv = Conv2d::he_init(2, 3, stride, &mut rng);
            let x = random_input(&mut rng, 2, 8, 8);
            let y = conv.forward(&x);
            let gy = random_input(&mut rng, 3, y.dim().1, y.dim().2);
            let mut gw = vec![0.0; conv.weight.len()];
            let mut gb = vec![0.0; 3];
            let gx = conv
                .backward(&x, &gy, true, Some((&mut gw, &mut gb)))
                .unwrap();
            let lhs: f64 = y
                .iter()
                .zip(gy.iter())
                .enumerate()
                .map(|(i, (&a, &g))| (a - conv.bias[i / (y.dim().1 * y.dim().2)]) as f64 * g as f64)
                .sum();
            let rhs: f64 = x.iter().zip(gx.iter()).map(|(&a, &g)| a as f64 * g as f64).sum();
            assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
            let wdot: f64 = conv
                .weight
                .iter()
                .zip(&gw)
                .map(|(&a, &g)| a as f64 * g as f64)
                .sum();
            assert!((wdot - lhs).abs() < 1e-3);
            assert!((gb.iter().sum::<f32>() - gy.sum()).abs() < 1e-4);
        }
    }

    #[test]
    fn guided_rule_zeroes_negative_upstream() {
        let act = Array1::from(vec![0.5f32, 1.0]);
        let mut g = Array1::from(vec![-1.0f32, 2.0]);
        let mut trace = RectifierTrace::default();
        relu_backward_1d(&act, &mut g, BackpropMode::Guided, &mut trace);
        assert_eq!(g.to_vec(), vec![0.0, 2.0]);
        assert_eq!(trace.negative_propagated, 0);

        let mut g = Array1::from(vec![-1.0f32, 2.0]);
        let mut trace = RectifierTrace::default();
        relu_backward_1d(&act, &mut g, BackpropMode::Standard, &mut trace);
        assert_eq!(g.to_vec(), vec![-1.0, 2.0]);
        assert_eq!(trace.negative_propagated, 1);
    }
}
