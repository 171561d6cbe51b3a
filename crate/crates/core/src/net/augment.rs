//! Data augmentation: random flips, quarter-turn rotations and multi-scale
//! resizing, applied identically to an image and its (tri-valued) label.
//!
//! Images are resampled bilinearly, labels with nearest neighbor, so label
//! values are always drawn from the original label set. Scaled sizes snap to
//! multiples of 4 to stay divisible by every network's downsampling factor.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::loss::FeatureMap;
use crate::mask::{ImageSize, TriLabel, TriLabelMask};

/// Scales used by multi-scale training.
pub const SCALES: [f64; 3] = [0.75, 1.0, 1.25];

/// One concrete spatial transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Number of 90-degree clockwise turns, 0..=3.
    pub quarter_turns: u8,
    pub scale: f64,
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            flip_h: false,
            flip_v: false,
            quarter_turns: 0,
            scale: 1.0,
        }
    }

    /// Draw a transform from the seeded distribution: independent coin flips,
    /// a uniform rotation and a uniform scale choice.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Augmentation {
            flip_h: rng.gen_bool(0.5),
            flip_v: rng.gen_bool(0.5),
            quarter_turns: rng.gen_range(0..4u8),
            scale: SCALES[rng.gen_range(0..SCALES.len())],
        }
    }

    pub fn apply_image(&self, img: &FeatureMap) -> FeatureMap {
        let mut out = img.clone();
        if self.flip_h {
            out = flip_h_feature(&out);
        }
        if self.flip_v {
            out = flip_v_feature(&out);
        }
        for _ in 0..self.quarter_turns {
            out = rot90_feature(&out);
        }
        if self.scale != 1.0 {
            let target = scaled_size(out.size(), self.scale);
            out = resize_bilinear(&out, target);
        }
        out
    }

    pub fn apply_labels(&self, labels: &TriLabelMask) -> TriLabelMask {
        let mut out = labels.clone();
        if self.flip_h {
            out = flip_h_labels(&out);
        }
        if self.flip_v {
            out = flip_v_labels(&out);
        }
        for _ in 0..self.quarter_turns {
            out = rot90_labels(&out);
        }
        if self.scale != 1.0 {
            let target = scaled_size(out.size(), self.scale);
            out = resize_nearest(&out, target);
        }
        out
    }
}

/// Apply one seeded random transform to an image/label pair.
pub fn augment(
    image: &FeatureMap,
    labels: &TriLabelMask,
    seed: u64,
) -> (FeatureMap, TriLabelMask) {
    let aug = Augmentation::sample(seed);
    (aug.apply_image(image), aug.apply_labels(labels))
}

/// Round each dimension to the nearest multiple of 4 (minimum 4).
pub fn scaled_size(size: ImageSize, scale: f64) -> ImageSize {
    let snap = |d: usize| (((d as f64 * scale / 4.0).round() as usize).max(1)) * 4;
    ImageSize::new(snap(size.height), snap(size.width))
}

pub fn flip_h_feature(f: &FeatureMap) -> FeatureMap {
    let size = f.size();
    let mut out = FeatureMap::zeros(f.channels(), size);
    for c in 0..f.channels() {
        for y in 0..size.height {
            for x in 0..size.width {
                out.set(c, y, size.width - 1 - x, f.get(c, y, x));
            }
        }
    }
    out
}

pub fn flip_v_feature(f: &FeatureMap) -> FeatureMap {
    let size = f.size();
    let mut out = FeatureMap::zeros(f.channels(), size);
    for c in 0..f.channels() {
        for y in 0..size.height {
            for x in 0..size.width {
                out.set(c, size.height - 1 - y, x, f.get(c, y, x));
            }
        }
    }
    out
}

/// 90-degree clockwise rotation; output is W x H.
pub fn rot90_feature(f: &FeatureMap) -> FeatureMap {
    let size = f.size();
    let out_size = ImageSize::new(size.width, size.height);
    let mut out = FeatureMap::zeros(f.channels(), out_size);
    for c in 0..f.channels() {
        for y in 0..out_size.height {
            for x in 0..out_size.width {
                out.set(c, y, x, f.get(c, size.height - 1 - x, y));
            }
        }
    }
    out
}

pub fn resize_bilinear(f: &FeatureMap, target: ImageSize) -> FeatureMap {
    if target == f.size() {
        return f.clone();
    }
    let src = f.size();
    let ty = taps(target.height, src.height);
    let tx = taps(target.width, src.width);
    let mut out = FeatureMap::zeros(f.channels(), target);
    for c in 0..f.channels() {
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = (1.0 - fy) * ((1.0 - fx) * f.get(c, y0, x0) + fx * f.get(c, y0, x1))
                    + fy * ((1.0 - fx) * f.get(c, y1, x0) + fx * f.get(c, y1, x1));
                out.set(c, y, x, v);
            }
        }
    }
    out
}

fn taps(n_out: usize, n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let srcf = (o as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
            let i0 = srcf.floor();
            let frac = srcf - i0;
            let lo = (i0.max(0.0) as usize).min(n_in - 1);
            let hi = ((i0 as isize + 1).max(0) as usize).min(n_in - 1);
            (lo, hi, frac)
        })
        .collect()
}

pub fn flip_h_labels(t: &TriLabelMask) -> TriLabelMask {
    let size = t.size();
    let mut labels = vec![TriLabel::Background; size.pixels()];
    for y in 0..size.height {
        for x in 0..size.width {
            labels[y * size.width + (size.width - 1 - x)] = t.get(y, x);
        }
    }
    TriLabelMask::new(size, labels)
}

pub fn flip_v_labels(t: &TriLabelMask) -> TriLabelMask {
    let size = t.size();
    let mut labels = vec![TriLabel::Background; size.pixels()];
    for y in 0..size.height {
        for x in 0..size.width {
            labels[(size.height - 1 - y) * size.width + x] = t.get(y, x);
        }
    }
    TriLabelMask::new(size, labels)
}

pub fn rot90_labels(t: &TriLabelMask) -> TriLabelMask {
    let size = t.size();
    let out_size = ImageSize::new(size.width, size.height);
    let mut labels = vec![TriLabel::Background; out_size.pixels()];
    for y in 0..out_size.height {
        for x in 0..out_size.width {
            labels[y * out_size.width + x] = t.get(size.height - 1 - x, y);
        }
    }
    TriLabelMask::new(out_size, labels)
}

pub fn resize_nearest(t: &TriLabelMask, target: ImageSize) -> TriLabelMask {
    if target == t.size() {
        return t.clone();
    }
    let src = t.size();
    let map = |o: usize, n_out: usize, n_in: usize| -> usize {
        let srcf = (o as f64 + 0.5) * (n_in as f64 / n_out as f64);
        (srcf.floor() as usize).min(n_in - 1)
    };
    let mut labels = Vec::with_capacity(target.pixels());
    for y in 0..target.height {
        let sy = map(y, target.height, src.height);
        for x in 0..target.width {
            let sx = map(x, target.width, src.width);
            labels.push(t.get(sy, sx));
        }
    }
    TriLabelMask::new(target, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{rasterize_boxes, BoundingBox};

    fn image(h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(
            1,
            ImageSize::new(h, w),
            (0..h * w).map(|i| i as f64 * 0.01).collect(),
        )
    }

    fn labels(h: usize, w: usize) -> TriLabelMask {
        let b = rasterize_boxes(&[BoundingBox::new(1, 1, w - 1, h / 2)], ImageSize::new(h, w))
            .unwrap();
        let p = rasterize_boxes(&[BoundingBox::new(0, 0, w / 2, h - 1)], ImageSize::new(h, w))
            .unwrap();
        crate::ffs::pixel_fusion(&b, &p).unwrap()
    }

    #[test]
    fn horizontal_flip_is_an_involution() {
        let img = image(6, 8);
        assert_eq!(flip_h_feature(&flip_h_feature(&img)), img);
        let t = labels(6, 8);
        assert_eq!(flip_h_labels(&flip_h_labels(&t)), t);
    }

    #[test]
    fn vertical_flip_is_an_involution() {
        let img = image(6, 8);
        assert_eq!(flip_v_feature(&flip_v_feature(&img)), img);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = image(6, 8);
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90_feature(&r);
        }
        assert_eq!(r, img);
        let t = labels(6, 8);
        let mut rt = t.clone();
        for _ in 0..4 {
            rt = rot90_labels(&rt);
        }
        assert_eq!(rt, t);
    }

    #[test]
    fn rotation_swaps_dimensions() {
        let img = image(4, 8);
        let r = rot90_feature(&img);
        assert_eq!(r.size(), ImageSize::new(8, 4));
    }

    #[test]
    fn scaled_sizes_stay_divisible_by_four() {
        for &s in &SCALES {
            let t = scaled_size(ImageSize::new(64, 64), s);
            assert_eq!(t.height % 4, 0);
            assert_eq!(t.width % 4, 0);
        }
        assert_eq!(scaled_size(ImageSize::new(64, 64), 0.75), ImageSize::new(48, 48));
        assert_eq!(scaled_size(ImageSize::new(64, 64), 1.25), ImageSize::new(80, 80));
    }

    #[test]
    fn augment_applies_same_transform_to_both() {
        // a foreground-only label should track the bright half of the image
        let size = ImageSize::new(8, 8);
        let fg = rasterize_boxes(&[BoundingBox::new(0, 0, 4, 8)], size).unwrap();
        let img_vals: Vec<f64> = fg.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let img = FeatureMap::new(1, size, img_vals);
        let t = TriLabelMask::from_binary(&fg);
        for seed in 0..20 {
            let (ai, al) = augment(&img, &t, seed);
            assert_eq!(ai.size(), al.size());
            for y in 0..al.size().height {
                for x in 0..al.size().width {
                    let is_fg = al.get(y, x) == TriLabel::Foreground;
                    let bright = ai.get(0, y, x) > 0.5;
                    // bilinear blurs the boundary column; skip near-half values
                    if (ai.get(0, y, x) - 0.5).abs() > 0.26 {
                        assert_eq!(is_fg, bright, "seed {seed} at ({y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn uncertain_pixels_survive_every_transform() {
        let t = labels(8, 8);
        let n_unc = t.count(TriLabel::Uncertain);
        assert!(n_unc > 0);
        for seed in 0..30 {
            let aug = Augmentation::sample(seed);
            let out = aug.apply_labels(&t);
            if aug.scale == 1.0 {
                assert_eq!(out.count(TriLabel::Uncertain), n_unc, "seed {seed}");
            } else {
                // nearest-neighbor resampling only copies existing labels
                assert!(out.count(TriLabel::Uncertain) > 0, "seed {seed}");
            }
        }
    }
}
