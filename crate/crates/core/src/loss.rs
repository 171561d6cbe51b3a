//! Masked loss terms with analytic gradients.
//!
//! Three terms feed the boost-training objective: region-masked binary cross
//! entropy, region-masked smoothed Dice loss, and an image-consistency loss
//! that penalizes squared feature distance between two networks on uncertain
//! pixels only. The total is their unweighted sum, with the supervised terms
//! applied to both networks' predictions.
//!
//! Conventions, pinned here and asserted by tests:
//! - BCE clamps probabilities to `[EPS_CLAMP, 1 - EPS_CLAMP]` and averages
//!   over active pixels; an empty region yields value 0 with zero gradient.
//! - Dice loss uses additive smoothing `SMOOTH = 1` on numerator and
//!   denominator, so an all-empty region or all-zero target stays finite.
//! - The IC loss normalizes by the number of uncertain pixels and averages
//!   over channels, so its magnitude is independent of channel count, and
//!   gradients flow to both feature maps (no stop-gradient on either side).

use crate::error::Error;
use crate::mask::{BinaryMask, ImageSize, ProbMap, TriLabelMask};
use crate::Result;

/// Probability clamp used by the BCE loss.
pub const EPS_CLAMP: f64 = 1e-7;
/// Additive smoothing used by the Dice loss.
pub const SMOOTH: f64 = 1.0;

/// C x H x W tensor of finite reals; the currency between networks and losses.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    size: ImageSize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, size: ImageSize) -> Self {
        assert!(channels >= 1, "feature maps need at least one channel");
        FeatureMap {
            channels,
            size,
            values: vec![0.0; channels * size.pixels()],
        }
    }

    pub fn new(channels: usize, size: ImageSize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), channels * size.pixels());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureMap {
            channels,
            size,
            values,
        }
    }

    /// Single-channel map from per-pixel values.
    pub fn from_plane(size: ImageSize, values: Vec<f64>) -> Self {
        FeatureMap::new(1, size, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.size.height + y) * self.size.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.values[i] = v;
    }

    /// Channel `c` as a contiguous H*W slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.size.pixels();
        &self.values[c * n..(c + 1) * n]
    }

    /// Elementwise sigmoid into a probability map; only meaningful for
    /// single-channel logit maps.
    pub fn sigmoid_plane(&self) -> ProbMap {
        debug_assert_eq!(self.channels, 1);
        let vals = self.values.iter().map(|&z| sigmoid(z)).collect();
        ProbMap::new(self.size, vals).expect("sigmoid output is always in [0,1]")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// H x W binary weights selecting which pixels a loss term sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    size: ImageSize,
    weights: Vec<bool>,
}

impl RegionMask {
    pub fn full(size: ImageSize) -> Self {
        RegionMask {
            size,
            weights: vec![true; size.pixels()],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        RegionMask {
            size: mask.size(),
            weights: mask.bits().to_vec(),
        }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn weights(&self) -> &[bool] {
        &self.weights
    }

    pub fn active_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w).count()
    }
}

/// Loss value plus gradient with respect to one H x W prediction plane.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    /// d(value)/d(pred) per pixel, row-major; exactly zero outside the region.
    pub grad: Vec<f64>,
}

/// IC loss value plus gradients with respect to both feature maps.
#[derive(Debug, Clone)]
pub struct IcLossResult {
    pub value: f64,
    pub grad_r: FeatureMap,
    pub grad_p: FeatureMap,
}

fn check_plane_sizes(context: &'static str, a: ImageSize, b: ImageSize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Region-masked binary cross entropy, averaged over active pixels.
///
/// The prediction is clamped to `[EPS_CLAMP, 1 - EPS_CLAMP]` inside the loss;
/// the returned gradient is with respect to the unclamped input, so it is
/// zero where the clamp saturates.
pub fn bce_loss(pred: &ProbMap, target: &BinaryMask, region: &RegionMask) -> Result<LossResult> {
    check_plane_sizes("bce_loss pred/target", pred.size(), target.size())?;
    check_plane_sizes("bce_loss pred/region", pred.size(), region.size())?;
    let n = region.active_count();
    let mut grad = vec![0.0; pred.size().pixels()];
    if n == 0 {
        return Ok(LossResult { value: 0.0, grad });
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    for (i, ((&p, &t), &w)) in pred
        .values()
        .iter()
        .zip(target.bits())
        .zip(region.weights())
        .enumerate()
    {
        if !w {
            continue;
        }
        let t = t as u8 as f64;
        let clamped = p.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP);
        value -= t * clamped.ln() + (1.0 - t) * (1.0 - clamped).ln();
        if p > EPS_CLAMP && p < 1.0 - EPS_CLAMP {
            grad[i] = inv_n * (clamped - t) / (clamped * (1.0 - clamped));
        }
    }
    Ok(LossResult {
        value: value * inv_n,
        grad,
    })
}

/// Region-masked smoothed Dice loss: `1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)`
/// with sums over active pixels and smoothing `s = SMOOTH`.
pub fn dice_loss(pred: &ProbMap, target: &BinaryMask, region: &RegionMask) -> Result<LossResult> {
    check_plane_sizes("dice_loss pred/target", pred.size(), target.size())?;
    check_plane_sizes("dice_loss pred/region", pred.size(), region.size())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&p, &t), &w) in pred
        .values()
        .iter()
        .zip(target.bits())
        .zip(region.weights())
    {
        if !w {
            continue;
        }
        let t = t as u8 as f64;
        num += p * t;
        den += p + t;
    }
    let a = 2.0 * num + SMOOTH;
    let b = den + SMOOTH;
    let value = 1.0 - a / b;
    let mut grad = vec![0.0; pred.size().pixels()];
    for (i, (&t, &w)) in target.bits().iter().zip(region.weights()).enumerate() {
        if !w {
            continue;
        }
        let t = t as u8 as f64;
        grad[i] = -(2.0 * t * b - a) / (b * b);
    }
    Ok(LossResult { value, grad })
}

/// Image-consistency loss: masked mean squared feature distance over
/// uncertain pixels, additionally averaged over channels. Returns zero with
/// zero gradients when the uncertain region is empty.
pub fn ic_loss(f_r: &FeatureMap, f_p: &FeatureMap, u: &RegionMask) -> Result<IcLossResult> {
    if f_r.channels() != f_p.channels() || f_r.size() != f_p.size() {
        return Err(Error::ShapeMismatch {
            context: "ic_loss features",
            expected: f_r.size(),
            found: f_p.size(),
        });
    }
    check_plane_sizes("ic_loss feature/region", f_r.size(), u.size())?;
    let mut grad_r = FeatureMap::zeros(f_r.channels(), f_r.size());
    let mut grad_p = FeatureMap::zeros(f_p.channels(), f_p.size());
    let active = u.active_count();
    if active == 0 {
        return Ok(IcLossResult {
            value: 0.0,
            grad_r,
            grad_p,
        });
    }
    let channels = f_r.channels();
    let pixels = f_r.size().pixels();
    let norm = 1.0 / (channels as f64 * active as f64);
    let mut value = 0.0;
    for c in 0..channels {
        let base = c * pixels;
        for (i, &w) in u.weights().iter().enumerate() {
            if !w {
                continue;
            }
            let d = f_r.values()[base + i] - f_p.values()[base + i];
            value += d * d;
            grad_r.values_mut()[base + i] = 2.0 * d * norm;
            grad_p.values_mut()[base + i] = -2.0 * d * norm;
        }
    }
    Ok(IcLossResult {
        value: value * norm,
        grad_r,
        grad_p,
    })
}

/// The five loss terms of one training sample, reported individually.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub bce_r: f64,
    pub dice_r: f64,
    pub bce_p: f64,
    pub dice_p: f64,
    pub ic: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.bce_r + self.dice_r + self.bce_p + self.dice_p + self.ic
    }
}

/// Value and gradients of the full objective for one sample.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossTerms,
    pub grad_pred_r: Vec<f64>,
    pub grad_pred_p: Vec<f64>,
    pub grad_f_r: FeatureMap,
    pub grad_f_p: FeatureMap,
}

/// Total objective: BCE + Dice on the certain region (for both networks'
/// predictions, against the pseudo-label foreground bits) plus the IC loss on
/// the uncertain region.
pub fn total_loss(
    pred_r: &ProbMap,
    pred_p: &ProbMap,
    f_r: &FeatureMap,
    f_p: &FeatureMap,
    pseudo: &TriLabelMask,
) -> Result<TotalLoss> {
    check_plane_sizes("total_loss pred_r/pseudo", pred_r.size(), pseudo.size())?;
    check_plane_sizes("total_loss pred_p/pseudo", pred_p.size(), pseudo.size())?;
    check_plane_sizes("total_loss features/pseudo", f_r.size(), pseudo.size())?;
    let certain = RegionMask::from_mask(&pseudo.certain());
    let uncertain = RegionMask::from_mask(&pseudo.uncertain());
    let target = pseudo.foreground();

    let bce_r = bce_loss(pred_r, &target, &certain)?;
    let dice_r = dice_loss(pred_r, &target, &certain)?;
    let bce_p = bce_loss(pred_p, &target, &certain)?;
    let dice_p = dice_loss(pred_p, &target, &certain)?;
    let ic = ic_loss(f_r, f_p, &uncertain)?;

    let terms = LossTerms {
        bce_r: bce_r.value,
        dice_r: dice_r.value,
        bce_p: bce_p.value,
        dice_p: dice_p.value,
        ic: ic.value,
    };
    let grad_pred_r: Vec<f64> = bce_r
        .grad
        .iter()
        .zip(&dice_r.grad)
        .map(|(a, b)| a + b)
        .collect();
    let grad_pred_p: Vec<f64> = bce_p
        .grad
        .iter()
        .zip(&dice_p.grad)
        .map(|(a, b)| a + b)
        .collect();

    Ok(TotalLoss {
        value: terms.total(),
        terms,
        grad_pred_r,
        grad_pred_p,
        grad_f_r: ic.grad_r,
        grad_f_p: ic.grad_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{rasterize_boxes, BoundingBox};

    fn sz(h: usize, w: usize) -> ImageSize {
        ImageSize::new(h, w)
    }

    #[test]
    fn bce_at_half_is_ln_two() {
        let size = sz(2, 2);
        let pred = ProbMap::constant(size, 0.5).unwrap();
        let target = rasterize_boxes(&[BoundingBox::new(0, 0, 1, 2)], size).unwrap();
        let r = bce_loss(&pred, &target, &RegionMask::full(size)).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let size = sz(2, 2);
        let target = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 1)], size).unwrap();
        let pred = ProbMap::new(
            size,
            target.bits().iter().map(|&t| t as u8 as f64).collect(),
        )
        .unwrap();
        let r = bce_loss(&pred, &target, &RegionMask::full(size)).unwrap();
        // hard 0/1 predictions hit the clamp: loss is -ln(1 - EPS_CLAMP) per pixel
        assert!(r.value > 0.0 && r.value <= 1.1e-7, "value = {}", r.value);
    }

    #[test]
    fn bce_masked_equals_unmasked_on_selected_pixels() {
        let size = sz(2, 2);
        let pred = ProbMap::new(size, vec![0.3, 0.8, 0.6, 0.2]).unwrap();
        // target marks only pixel 0 as foreground
        let target = rasterize_boxes(&[BoundingBox::new(0, 0, 1, 1)], size).unwrap();
        // region selects pixels 0 and 1 (top row)
        let region = RegionMask::from_mask(
            &rasterize_boxes(&[BoundingBox::new(0, 0, 2, 1)], size).unwrap(),
        );
        let r = bce_loss(&pred, &target, &region).unwrap();
        // hand computation: pixel0 t=1 p=0.3, pixel1 t=0 p=0.8
        let expect = (-(0.3f64.ln()) - (1.0f64 - 0.8).ln()) / 2.0;
        assert!((r.value - expect).abs() < 1e-12);
        // gradient vanishes outside the region
        assert_eq!(r.grad[2], 0.0);
        assert_eq!(r.grad[3], 0.0);
    }

    #[test]
    fn bce_empty_region_is_zero_with_zero_grad() {
        let size = sz(2, 2);
        let pred = ProbMap::constant(size, 0.5).unwrap();
        let target = BinaryMask::zeros(size);
        let empty = RegionMask::from_mask(&BinaryMask::zeros(size));
        let r = bce_loss(&pred, &target, &empty).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dice_loss_perfect_prediction_is_zero() {
        let size = sz(2, 2);
        let target = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 2)], size).unwrap();
        let pred = ProbMap::constant(size, 1.0).unwrap();
        let r = dice_loss(&pred, &target, &RegionMask::full(size)).unwrap();
        // 1 - (2k+1)/(2k+1) with k = 4 foreground pixels
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn dice_loss_all_zero_is_zero_by_smoothing() {
        let size = sz(2, 2);
        let pred = ProbMap::constant(size, 0.0).unwrap();
        let target = BinaryMask::zeros(size);
        let r = dice_loss(&pred, &target, &RegionMask::full(size)).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn dice_loss_worked_example() {
        // 2x2 region, 2 foreground pixels, pred 0.5 everywhere:
        // 1 - (2*1 + 1)/(2 + 2 + 1) = 0.4
        let size = sz(2, 2);
        let pred = ProbMap::constant(size, 0.5).unwrap();
        let target = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 1)], size).unwrap();
        let r = dice_loss(&pred, &target, &RegionMask::full(size)).unwrap();
        assert!((r.value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ic_identical_features_give_zero() {
        let size = sz(2, 2);
        let f = FeatureMap::new(1, size, vec![1.0, 2.0, 3.0, 4.0]);
        let u = RegionMask::full(size);
        let r = ic_loss(&f, &f, &u).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn ic_empty_region_gives_zero_and_zero_grads() {
        let size = sz(2, 2);
        let f_r = FeatureMap::new(1, size, vec![1.0, 2.0, 3.0, 4.0]);
        let f_p = FeatureMap::zeros(1, size);
        let u = RegionMask::from_mask(&BinaryMask::zeros(size));
        let r = ic_loss(&f_r, &f_p, &u).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_r.values().iter().all(|&g| g == 0.0));
        assert!(r.grad_p.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ic_worked_example_evaluates_to_ten() {
        let size = sz(2, 2);
        let f_r = FeatureMap::new(1, size, vec![1.0, 2.0, 3.0, 4.0]);
        let f_p = FeatureMap::new(1, size, vec![1.0, 0.0, 3.0, 0.0]);
        let u = RegionMask::from_mask(&BinaryMask::from_bits(
            size,
            vec![false, true, false, true],
        ));
        let r = ic_loss(&f_r, &f_p, &u).unwrap();
        assert_eq!(r.value, 10.0);
    }

    #[test]
    fn ic_symmetry_and_gradient_antisymmetry() {
        let size = sz(2, 3);
        let f_r = FeatureMap::new(2, size, (0..12).map(|i| i as f64 * 0.37 - 1.0).collect());
        let f_p = FeatureMap::new(2, size, (0..12).map(|i| (i as f64).sin()).collect());
        let u = RegionMask::from_mask(&BinaryMask::from_bits(
            size,
            vec![true, false, true, true, false, true],
        ));
        let a = ic_loss(&f_r, &f_p, &u).unwrap();
        let b = ic_loss(&f_p, &f_r, &u).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
        for (ga, gb) in a.grad_r.values().iter().zip(b.grad_p.values()) {
            assert!((ga - gb).abs() < 1e-15);
        }
        for (ga, gb) in a.grad_r.values().iter().zip(a.grad_p.values()) {
            assert!((ga + gb).abs() < 1e-15);
        }
    }

    #[test]
    fn total_loss_decomposes_into_terms() {
        let size = sz(3, 3);
        let b = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 3)], size).unwrap();
        let p = rasterize_boxes(&[BoundingBox::new(1, 0, 3, 2)], size).unwrap();
        let pseudo = crate::ffs::pixel_fusion(&b, &p).unwrap();
        let pred_r = ProbMap::new(size, (0..9).map(|i| 0.1 + 0.08 * i as f64).collect()).unwrap();
        let pred_p = ProbMap::new(size, (0..9).map(|i| 0.9 - 0.07 * i as f64).collect()).unwrap();
        let f_r = FeatureMap::new(1, size, (0..9).map(|i| i as f64 * 0.2).collect());
        let f_p = FeatureMap::new(1, size, (0..9).map(|i| 1.0 - i as f64 * 0.1).collect());
        let t = total_loss(&pred_r, &pred_p, &f_r, &f_p, &pseudo).unwrap();

        let certain = RegionMask::from_mask(&pseudo.certain());
        let uncertain = RegionMask::from_mask(&pseudo.uncertain());
        let target = pseudo.foreground();
        let sum = bce_loss(&pred_r, &target, &certain).unwrap().value
            + dice_loss(&pred_r, &target, &certain).unwrap().value
            + bce_loss(&pred_p, &target, &certain).unwrap().value
            + dice_loss(&pred_p, &target, &certain).unwrap().value
            + ic_loss(&f_r, &f_p, &uncertain).unwrap().value;
        assert!((t.value - sum).abs() < 1e-12);
    }

    #[test]
    fn total_loss_all_uncertain_reduces_to_ic() {
        let size = sz(2, 2);
        let pseudo =
            crate::ffs::pixel_fusion(&BinaryMask::ones(size), &BinaryMask::zeros(size)).unwrap();
        let pred = ProbMap::constant(size, 0.3).unwrap();
        let f_r = FeatureMap::new(1, size, vec![1.0, 2.0, 3.0, 4.0]);
        let f_p = FeatureMap::zeros(1, size);
        let t = total_loss(&pred, &pred, &f_r, &f_p, &pseudo).unwrap();
        assert_eq!(t.terms.bce_r, 0.0);
        assert_eq!(t.terms.dice_r, 0.0);
        assert_eq!(t.terms.bce_p, 0.0);
        assert_eq!(t.terms.dice_p, 0.0);
        assert!((t.value - t.terms.ic).abs() < 1e-15);
        // (1 + 4 + 9 + 16) / 4
        assert!((t.terms.ic - 7.5).abs() < 1e-12);
    }

    #[test]
    fn total_loss_perfect_and_certain_is_near_zero() {
        let size = sz(2, 2);
        let gt = rasterize_boxes(&[BoundingBox::new(0, 0, 1, 1)], size).unwrap();
        let pseudo = TriLabelMask::from_binary(&gt);
        let pred = ProbMap::new(size, gt.bits().iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let f = FeatureMap::zeros(1, size);
        let t = total_loss(&pred, &pred, &f, &f, &pseudo).unwrap();
        assert!(t.value < 1e-6, "value = {}", t.value);
    }
}
