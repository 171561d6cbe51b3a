//! Network building blocks with explicit forward and backward passes.
//!
//! Every op is deterministic and smooth (SiLU activation, average pooling,
//! bilinear upsampling), which keeps finite-difference gradient checks tight.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::loss::FeatureMap;
use crate::mask::ImageSize;

/// 2D convolution, stride 1, zero "same" padding, odd kernel, optional dilation.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// `[out_c][in_c][kernel][kernel]`, flattened.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd for same padding");
        assert!(dilation >= 1);
        let fan_in = in_c * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight = (0..out_c * fan_in)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Conv2d {
            in_c,
            out_c,
            kernel,
            dilation,
            weight,
            bias: vec![0.0; out_c],
        }
    }

    /// Half-width of the dilated kernel in pixels.
    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    #[inline]
    fn w_idx(&self, oc: usize, ic: usize, dy: usize, dx: usize) -> usize {
        ((oc * self.in_c + ic) * self.kernel + dy) * self.kernel + dx
    }

    pub fn forward(&self, input: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(input.channels(), self.in_c);
        let size = input.size();
        let (h, w) = (size.height, size.width);
        let mut out = FeatureMap::zeros(self.out_c, size);
        let center = (self.kernel - 1) / 2;
        for oc in 0..self.out_c {
            let b = self.bias[oc];
            {
                let plane = &mut out.values_mut()[oc * h * w..(oc + 1) * h * w];
                plane.iter_mut().for_each(|v| *v = b);
            }
            for ic in 0..self.in_c {
                let in_plane = input.plane(ic);
                for dy in 0..self.kernel {
                    let oy = (dy as isize - center as isize) * self.dilation as isize;
                    for dx in 0..self.kernel {
                        let ox = (dx as isize - center as isize) * self.dilation as isize;
                        let wgt = self.weight[self.w_idx(oc, ic, dy, dx)];
                        if wgt == 0.0 {
                            continue;
                        }
                        shift_accumulate(
                            &mut out.values_mut()[oc * h * w..(oc + 1) * h * w],
                            in_plane,
                            h,
                            w,
                            oy,
                            ox,
                            wgt,
                        );
                    }
                }
            }
        }
        out
    }

    /// Returns (grad_weight, grad_bias, grad_input).
    pub fn backward(
        &self,
        input: &FeatureMap,
        grad_out: &FeatureMap,
    ) -> (Vec<f64>, Vec<f64>, FeatureMap) {
        let size = input.size();
        let (h, w) = (size.height, size.width);
        let center = (self.kernel - 1) / 2;
        let mut grad_w = vec![0.0; self.weight.len()];
        let mut grad_b = vec![0.0; self.out_c];
        let mut grad_in = FeatureMap::zeros(self.in_c, size);
        for oc in 0..self.out_c {
            let g_plane = grad_out.plane(oc);
            grad_b[oc] = g_plane.iter().sum();
            for ic in 0..self.in_c {
                let in_plane = input.plane(ic);
                for dy in 0..self.kernel {
                    let oy = (dy as isize - center as isize) * self.dilation as isize;
                    for dx in 0..self.kernel {
                        let ox = (dx as isize - center as isize) * self.dilation as isize;
                        grad_w[self.w_idx(oc, ic, dy, dx)] =
                            shifted_dot(g_plane, in_plane, h, w, oy, ox);
                        let wgt = self.weight[self.w_idx(oc, ic, dy, dx)];
                        if wgt != 0.0 {
                            shift_scatter(
                                &mut grad_in.values_mut()[ic * h * w..(ic + 1) * h * w],
                                g_plane,
                                h,
                                w,
                                oy,
                                ox,
                                wgt,
                            );
                        }
                    }
                }
            }
        }
        (grad_w, grad_b, grad_in)
    }
}

/// `out[y][x] += wgt * src[y+oy][x+ox]` over the in-bounds range.
#[inline]
fn shift_accumulate(out: &mut [f64], src: &[f64], h: usize, w: usize, oy: isize, ox: isize, wgt: f64) {
    let y_lo = (-oy).max(0) as usize;
    let y_hi = ((h as isize - oy).min(h as isize)).max(0) as usize;
    let x_lo = (-ox).max(0) as usize;
    let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
    if y_lo >= y_hi || x_lo >= x_hi {
        return;
    }
    for y in y_lo..y_hi {
        let src_row = ((y as isize + oy) as usize) * w;
        let out_row = y * w;
        let s = &src[src_row + ((x_lo as isize + ox) as usize)..src_row + ((x_hi as isize + ox) as usize)];
        let o = &mut out[out_row + x_lo..out_row + x_hi];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += wgt * sv;
        }
    }
}

/// `sum over valid (y,x) of a[y][x] * b[y+oy][x+ox]`.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, oy: isize, ox: isize) -> f64 {
    let y_lo = (-oy).max(0) as usize;
    let y_hi = ((h as isize - oy).min(h as isize)).max(0) as usize;
    let x_lo = (-ox).max(0) as usize;
    let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
    if y_lo >= y_hi || x_lo >= x_hi {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in y_lo..y_hi {
        let b_row = ((y as isize + oy) as usize) * w;
        let a_row = y * w;
        let av = &a[a_row + x_lo..a_row + x_hi];
        let bv = &b[b_row + ((x_lo as isize + ox) as usize)..b_row + ((x_hi as isize + ox) as usize)];
        for (x, y2) in av.iter().zip(bv) {
            acc += x * y2;
        }
    }
    acc
}

/// `out[y+oy][x+ox] += wgt * src[y][x]` over the in-bounds range.
#[inline]
fn shift_scatter(out: &mut [f64], src: &[f64], h: usize, w: usize, oy: isize, ox: isize, wgt: f64) {
    let y_lo = (-oy).max(0) as usize;
    let y_hi = ((h as isize - oy).min(h as isize)).max(0) as usize;
    let x_lo = (-ox).max(0) as usize;
    let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
    if y_lo >= y_hi || x_lo >= x_hi {
        return;
    }
    for y in y_lo..y_hi {
        let out_row = ((y as isize + oy) as usize) * w;
        let src_row = y * w;
        let s = &src[src_row + x_lo..src_row + x_hi];
        let o = &mut out
            [out_row + ((x_lo as isize + ox) as usize)..out_row + ((x_hi as isize + ox) as usize)];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += wgt * sv;
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    crate::loss::sigmoid(z)
}

/// SiLU (x * sigmoid(x)) applied elementwise.
pub fn silu_forward(input: &FeatureMap) -> FeatureMap {
    let values = input.values().iter().map(|&x| x * sigmoid(x)).collect();
    FeatureMap::new(input.channels(), input.size(), values)
}

pub fn silu_backward(input: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let values = input
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * (s * (1.0 + x * (1.0 - s)))
        })
        .collect();
    FeatureMap::new(input.channels(), input.size(), values)
}

/// 2x2 average pooling, stride 2. Requires even spatial dims.
pub fn avgpool_forward(input: &FeatureMap) -> FeatureMap {
    let size = input.size();
    let (h, w) = (size.height / 2, size.width / 2);
    let out_size = ImageSize::new(h, w);
    let mut out = FeatureMap::zeros(input.channels(), out_size);
    for c in 0..input.channels() {
        let src = input.plane(c);
        let dst = &mut out.values_mut()[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let r0 = 2 * y * size.width + 2 * x;
                let r1 = r0 + size.width;
                dst[y * w + x] = 0.25 * (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]);
            }
        }
    }
    out
}

pub fn avgpool_backward(input_size: ImageSize, channels: usize, grad_out: &FeatureMap) -> FeatureMap {
    let (h, w) = (grad_out.size().height, grad_out.size().width);
    let mut grad_in = FeatureMap::zeros(channels, input_size);
    for c in 0..channels {
        let g = grad_out.plane(c);
        let dst = &mut grad_in.values_mut()[c * input_size.pixels()..(c + 1) * input_size.pixels()];
        for y in 0..h {
            for x in 0..w {
                let v = 0.25 * g[y * w + x];
                let r0 = 2 * y * input_size.width + 2 * x;
                let r1 = r0 + input_size.width;
                dst[r0] += v;
                dst[r0 + 1] += v;
                dst[r1] += v;
                dst[r1 + 1] += v;
            }
        }
    }
    grad_in
}

/// Per-axis bilinear interpolation taps for a 2x upsample with half-pixel
/// centers: output index -> (lo, hi, weight of hi).
fn bilinear_taps(n_out: usize, n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let lo = (i0.max(0.0) as usize).min(n_in - 1);
            let hi = ((i0 as isize + 1).max(0) as usize).min(n_in - 1);
            (lo, hi, frac)
        })
        .collect()
}

/// Bilinear 2x upsampling.
pub fn upsample_forward(input: &FeatureMap) -> FeatureMap {
    let in_size = input.size();
    let out_size = ImageSize::new(in_size.height * 2, in_size.width * 2);
    let ty = bilinear_taps(out_size.height, in_size.height);
    let tx = bilinear_taps(out_size.width, in_size.width);
    let mut out = FeatureMap::zeros(input.channels(), out_size);
    for c in 0..input.channels() {
        let src = input.plane(c);
        let dst = &mut out.values_mut()[c * out_size.pixels()..(c + 1) * out_size.pixels()];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v00 = src[y0 * in_size.width + x0];
                let v01 = src[y0 * in_size.width + x1];
                let v10 = src[y1 * in_size.width + x0];
                let v11 = src[y1 * in_size.width + x1];
                dst[y * out_size.width + x] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                    + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    out
}

pub fn upsample_backward(input_size: ImageSize, channels: usize, grad_out: &FeatureMap) -> FeatureMap {
    let out_size = grad_out.size();
    let ty = bilinear_taps(out_size.height, input_size.height);
    let tx = bilinear_taps(out_size.width, input_size.width);
    let mut grad_in = FeatureMap::zeros(channels, input_size);
    for c in 0..channels {
        let g = grad_out.plane(c);
        let dst = &mut grad_in.values_mut()[c * input_size.pixels()..(c + 1) * input_size.pixels()];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g[y * out_size.width + x];
                dst[y0 * input_size.width + x0] += (1.0 - fy) * (1.0 - fx) * gv;
                dst[y0 * input_size.width + x1] += (1.0 - fy) * fx * gv;
                dst[y1 * input_size.width + x0] += fy * (1.0 - fx) * gv;
                dst[y1 * input_size.width + x1] += fy * fx * gv;
            }
        }
    }
    grad_in
}

/// One network layer. Convolutions carry the parameters; everything else is
/// parameter-free.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Silu,
    AvgPool,
    Upsample,
}

impl Layer {
    pub fn forward(&self, input: &FeatureMap) -> FeatureMap {
        match self {
            Layer::Conv(c) => c.forward(input),
            Layer::Silu => silu_forward(input),
            Layer::AvgPool => avgpool_forward(input),
            Layer::Upsample => upsample_forward(input),
        }
    }

    /// Returns (optional (grad_weight, grad_bias), grad_input).
    pub fn backward(
        &self,
        input: &FeatureMap,
        grad_out: &FeatureMap,
    ) -> (Option<(Vec<f64>, Vec<f64>)>, FeatureMap) {
        match self {
            Layer::Conv(c) => {
                let (gw, gb, gin) = c.backward(input, grad_out);
                (Some((gw, gb)), gin)
            }
            Layer::Silu => (None, silu_backward(input, grad_out)),
            Layer::AvgPool => (None, avgpool_backward(input.size(), input.channels(), grad_out)),
            Layer::Upsample => (None, upsample_backward(input.size(), input.channels(), grad_out)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let values = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::new(c, ImageSize::new(h, w), values)
    }

    /// Central finite difference on sum(output * probe) wrt one input value.
    fn fd_input_grad(layer: &Layer, input: &FeatureMap, probe: &FeatureMap, idx: usize) -> f64 {
        let h = 1e-5;
        let mut plus = input.clone();
        plus.values_mut()[idx] += h;
        let mut minus = input.clone();
        minus.values_mut()[idx] -= h;
        let f = |m: &FeatureMap| -> f64 {
            layer
                .forward(m)
                .values()
                .iter()
                .zip(probe.values())
                .map(|(a, b)| a * b)
                .sum()
        };
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn check_layer_input_grad(layer: Layer, input: FeatureMap) {
        let out = layer.forward(&input);
        let mut r = rng();
        let probe = random_map(out.channels(), out.size().height, out.size().width, &mut r);
        let (_, grad_in) = layer.backward(&input, &probe);
        for idx in [0usize, 3, 7, input.values().len() - 1] {
            let fd = fd_input_grad(&layer, &input, &probe, idx);
            let an = grad_in.values()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "idx {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn conv_input_gradient_matches_fd() {
        let mut r = rng();
        let conv = Conv2d::new(2, 3, 3, 1, &mut r);
        let input = random_map(2, 6, 6, &mut r);
        check_layer_input_grad(Layer::Conv(conv), input);
    }

    #[test]
    fn dilated_conv_gradient_matches_fd() {
        let mut r = rng();
        let conv = Conv2d::new(1, 2, 5, 2, &mut r);
        let input = random_map(1, 12, 10, &mut r);
        check_layer_input_grad(Layer::Conv(conv), input);
    }

    #[test]
    fn conv_weight_gradient_matches_fd() {
        let mut r = rng();
        let conv = Conv2d::new(2, 2, 3, 1, &mut r);
        let input = random_map(2, 5, 5, &mut r);
        let out = conv.forward(&input);
        let probe = random_map(2, 5, 5, &mut r);
        let (gw, gb, _) = conv.backward(&input, &probe);
        let h = 1e-5;
        for widx in [0usize, 5, gw.len() - 1] {
            let mut cp = conv.clone();
            cp.weight[widx] += h;
            let up: f64 = cp
                .forward(&input)
                .values()
                .iter()
                .zip(probe.values())
                .map(|(a, b)| a * b)
                .sum();
            cp.weight[widx] -= 2.0 * h;
            let dn: f64 = cp
                .forward(&input)
                .values()
                .iter()
                .zip(probe.values())
                .map(|(a, b)| a * b)
                .sum();
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gw[widx]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
        // bias gradient is just the sum of upstream gradients per channel
        let expect: f64 = probe.plane(0).iter().sum();
        assert!((gb[0] - expect).abs() < 1e-12);
        let _ = out;
    }

    #[test]
    fn silu_pool_upsample_gradients_match_fd() {
        let mut r = rng();
        check_layer_input_grad(Layer::Silu, random_map(2, 4, 4, &mut r));
        check_layer_input_grad(Layer::AvgPool, random_map(2, 6, 6, &mut r));
        check_layer_input_grad(Layer::Upsample, random_map(1, 4, 5, &mut r));
    }

    #[test]
    fn avgpool_halves_and_averages() {
        let input = FeatureMap::new(
            1,
            ImageSize::new(2, 2),
            vec![1.0, 2.0, 3.0, 4.0],
        );
        let out = avgpool_forward(&input);
        assert_eq!(out.size(), ImageSize::new(1, 1));
        assert_eq!(out.values()[0], 2.5);
    }

    #[test]
    fn upsample_doubles_dims_and_preserves_constants() {
        let input = FeatureMap::new(1, ImageSize::new(3, 2), vec![0.5; 6]);
        let out = upsample_forward(&input);
        assert_eq!(out.size(), ImageSize::new(6, 4));
        assert!(out.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }
}
