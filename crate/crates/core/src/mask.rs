//! Mask data types, box rasterization, binary set algebra and overlap metrics.
//!
//! Everything here is a pure function over immutable values; all grids are
//! row-major with index `y * width + x`. Boxes use the half-open convention
//! `[x0, x1) x [y0, y1)`, so a box's area is `(x1 - x0) * (y1 - y0)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Height/width of a pixel grid. Both dimensions are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
}

impl ImageSize {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "image dimensions must be >= 1");
        ImageSize { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Axis-aligned box annotation, half-open in both axes. Serializes as a
/// `[x0, y0, x1, y1]` integer array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", from = "[usize; 4]")]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl From<BoundingBox> for [usize; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl From<[usize; 4]> for BoundingBox {
    fn from(a: [usize; 4]) -> Self {
        BoundingBox {
            x0: a[0],
            y0: a[1],
            x1: a[2],
            y1: a[3],
        }
    }
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }

    /// Valid means nonempty and contained in `size`.
    pub fn is_valid_for(&self, size: ImageSize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= size.width && self.y1 <= size.height
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x0, self.y0, self.x1, self.y1)
    }
}

/// H x W boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    size: ImageSize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(size: ImageSize) -> Self {
        BinaryMask {
            size,
            bits: vec![false; size.pixels()],
        }
    }

    pub fn ones(size: ImageSize) -> Self {
        BinaryMask {
            size,
            bits: vec![true; size.pixels()],
        }
    }

    pub fn from_bits(size: ImageSize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), size.pixels(), "bit count must equal H*W");
        BinaryMask { size, bits }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.size.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.size.width + x] = v;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight bounding box of the set pixels, or `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0) = (self.size.width, self.size.height);
        let (mut x1, mut y1) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.size.height {
            for x in 0..self.size.width {
                if self.get(y, x) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        any.then(|| BoundingBox::new(x0, y0, x1, y1))
    }

    pub fn flip_h(&self) -> Self {
        let mut out = BinaryMask::zeros(self.size);
        for y in 0..self.size.height {
            for x in 0..self.size.width {
                out.set(y, self.size.width - 1 - x, self.get(y, x));
            }
        }
        out
    }

    pub fn flip_v(&self) -> Self {
        let mut out = BinaryMask::zeros(self.size);
        for y in 0..self.size.height {
            for x in 0..self.size.width {
                out.set(self.size.height - 1 - y, x, self.get(y, x));
            }
        }
        out
    }
}

/// H x W per-pixel foreground probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    size: ImageSize,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(size: ImageSize, values: Vec<f64>) -> Result<Self> {
        assert_eq!(values.len(), size.pixels(), "value count must equal H*W");
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Param {
                    name: "prob",
                    value: v,
                    requirement: "every probability must lie in [0,1]",
                });
            }
        }
        Ok(ProbMap { size, values })
    }

    pub fn constant(size: ImageSize, v: f64) -> Result<Self> {
        ProbMap::new(size, vec![v; size.pixels()])
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.size.width + x]
    }
}

/// Per-pixel tri-valued pseudo label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TriLabel {
    Background = 0,
    Uncertain = 1,
    Foreground = 2,
}

/// H x W grid of [`TriLabel`]s. The three label sets partition the grid by
/// construction (each pixel holds exactly one label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriLabelMask {
    size: ImageSize,
    labels: Vec<TriLabel>,
}

impl TriLabelMask {
    pub fn new(size: ImageSize, labels: Vec<TriLabel>) -> Self {
        assert_eq!(labels.len(), size.pixels(), "label count must equal H*W");
        TriLabelMask { size, labels }
    }

    /// All-certain mask derived from a binary mask: set pixels become
    /// foreground, the rest background, nothing uncertain.
    pub fn from_binary(mask: &BinaryMask) -> Self {
        let labels = mask
            .bits()
            .iter()
            .map(|&b| if b { TriLabel::Foreground } else { TriLabel::Background })
            .collect();
        TriLabelMask {
            size: mask.size(),
            labels,
        }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn labels(&self) -> &[TriLabel] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> TriLabel {
        self.labels[y * self.size.width + x]
    }

    pub fn count(&self, label: TriLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Binary mask of pixels carrying `label`.
    pub fn select(&self, label: TriLabel) -> BinaryMask {
        BinaryMask::from_bits(self.size, self.labels.iter().map(|&l| l == label).collect())
    }

    /// Foreground pixels as a binary mask (the supervised target bits).
    pub fn foreground(&self) -> BinaryMask {
        self.select(TriLabel::Foreground)
    }

    /// Pixels with a definite label (foreground or background).
    pub fn certain(&self) -> BinaryMask {
        BinaryMask::from_bits(
            self.size,
            self.labels.iter().map(|&l| l != TriLabel::Uncertain).collect(),
        )
    }

    /// Pixels with no definite label.
    pub fn uncertain(&self) -> BinaryMask {
        self.select(TriLabel::Uncertain)
    }
}

fn check_sizes(context: &'static str, a: ImageSize, b: ImageSize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Union of boxes as a binary mask: a pixel is set iff covered by at least
/// one box. Boxes are validated against `size` before any rasterization.
pub fn rasterize_boxes(boxes: &[BoundingBox], size: ImageSize) -> Result<BinaryMask> {
    for b in boxes {
        if !b.is_valid_for(size) {
            return Err(Error::InvalidBox { bbox: *b, size });
        }
    }
    let mut mask = BinaryMask::zeros(size);
    for b in boxes {
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                mask.set(y, x, true);
            }
        }
    }
    Ok(mask)
}

/// Threshold a probability map with a strict comparison: bit = value > threshold.
pub fn binarize(p: &ProbMap, threshold: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Param {
            name: "threshold",
            value: threshold,
            requirement: "must lie in [0,1]",
        });
    }
    Ok(BinaryMask::from_bits(
        p.size(),
        p.values().iter().map(|&v| v > threshold).collect(),
    ))
}

/// Dice overlap 2|b∩p| / (|b|+|p|). Two empty masks count as perfect
/// agreement (1.0), which keeps the object filter well-defined on frames
/// without any annotation.
pub fn dice(b: &BinaryMask, p: &BinaryMask) -> Result<f64> {
    check_sizes("dice", b.size(), p.size())?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in b.bits().iter().zip(p.bits()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Intersection over union |b∩p| / |b∪p|, 1.0 when both masks are empty.
pub fn iou(b: &BinaryMask, p: &BinaryMask) -> Result<f64> {
    check_sizes("iou", b.size(), p.size())?;
    let mut inter = 0usize;
    let mut uni = 0usize;
    for (&x, &y) in b.bits().iter().zip(p.bits()) {
        inter += (x && y) as usize;
        uni += (x || y) as usize;
    }
    if uni == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / uni as f64)
}

pub fn intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    check_sizes("intersect", a.size(), b.size())?;
    Ok(BinaryMask::from_bits(
        a.size(),
        a.bits().iter().zip(b.bits()).map(|(&x, &y)| x && y).collect(),
    ))
}

pub fn union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    check_sizes("union", a.size(), b.size())?;
    Ok(BinaryMask::from_bits(
        a.size(),
        a.bits().iter().zip(b.bits()).map(|(&x, &y)| x || y).collect(),
    ))
}

pub fn complement(a: &BinaryMask) -> BinaryMask {
    BinaryMask::from_bits(a.size(), a.bits().iter().map(|&x| !x).collect())
}
