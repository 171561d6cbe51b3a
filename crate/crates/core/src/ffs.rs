//! Fusion filter sampling.
//!
//! Two stages: an object-level filter that drops box-annotated samples whose
//! box mask and predicted mask disagree (Dice at or below the threshold), and
//! a pixel-level fusion that splits each kept sample into deterministic
//! foreground (box AND prediction), deterministic background (neither), and
//! an uncertain remainder that carries no pseudo label.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mask::{binarize, complement, dice, BinaryMask, ProbMap, TriLabel, TriLabelMask};
use crate::Result;

/// Why a sample was kept or rejected by the object-level filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Kept,
    LowDice,
    EmptyAnnotation,
}

/// Outcome of the object-level filter for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub dice_score: f64,
    pub kept: bool,
    pub reason: FilterReason,
}

/// Thresholds for fusion filter sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FfsConfig {
    /// Samples are kept only when dice(box mask, prediction) exceeds this,
    /// with a strict comparison: a score exactly at the threshold is rejected.
    pub dice_threshold: f64,
    /// Threshold used to binarize the baseline's probability map.
    pub binarize_threshold: f64,
}

impl Default for FfsConfig {
    fn default() -> Self {
        FfsConfig {
            dice_threshold: 0.7,
            binarize_threshold: 0.5,
        }
    }
}

impl FfsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dice_threshold) {
            return Err(Error::Param {
                name: "dice_threshold",
                value: self.dice_threshold,
                requirement: "must lie in [0,1]",
            });
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::Param {
                name: "binarize_threshold",
                value: self.binarize_threshold,
                requirement: "must lie in [0,1]",
            });
        }
        Ok(())
    }
}

/// The threshold comparison behind [`object_filter`], exposed so the boundary
/// behaviour can be tested without constructing masks: strict `>`, and an
/// all-zero annotation mask is rejected regardless of the score.
pub fn decide(dice_score: f64, annotation_empty: bool, threshold: f64) -> FilterDecision {
    if annotation_empty {
        return FilterDecision {
            dice_score,
            kept: false,
            reason: FilterReason::EmptyAnnotation,
        };
    }
    if dice_score > threshold {
        FilterDecision {
            dice_score,
            kept: true,
            reason: FilterReason::Kept,
        }
    } else {
        FilterDecision {
            dice_score,
            kept: false,
            reason: FilterReason::LowDice,
        }
    }
}

/// Object-level filter: keep the sample iff dice(b, p) strictly exceeds the
/// configured threshold. An empty annotation mask (no box at all) is always
/// rejected with [`FilterReason::EmptyAnnotation`].
pub fn object_filter(b: &BinaryMask, p: &BinaryMask, cfg: &FfsConfig) -> Result<FilterDecision> {
    cfg.validate()?;
    let d = dice(b, p)?;
    Ok(decide(d, b.is_empty(), cfg.dice_threshold))
}

/// Pixel-level fusion of box mask and binarized prediction into a tri-valued
/// pseudo label: foreground where both agree on 1, background where both
/// agree on 0, uncertain elsewhere.
pub fn pixel_fusion(b: &BinaryMask, p: &BinaryMask) -> Result<TriLabelMask> {
    if b.size() != p.size() {
        return Err(Error::ShapeMismatch {
            context: "pixel_fusion",
            expected: b.size(),
            found: p.size(),
        });
    }
    let labels = b
        .bits()
        .iter()
        .zip(p.bits())
        .map(|(&bb, &pp)| match (bb, pp) {
            (true, true) => TriLabel::Foreground,
            (false, false) => TriLabel::Background,
            _ => TriLabel::Uncertain,
        })
        .collect();
    Ok(TriLabelMask::new(b.size(), labels))
}

/// Per-sample output of [`ffs_corpus`].
#[derive(Debug, Clone)]
pub struct FfsOutcome {
    pub decision: FilterDecision,
    /// Present only for kept samples.
    pub pseudo: Option<TriLabelMask>,
}

/// Error for one corpus item, carrying its position in the input.
#[derive(Debug, thiserror::Error)]
#[error("ffs item {index}: {source}")]
pub struct FfsItemError {
    pub index: usize,
    #[source]
    pub source: Error,
}

/// Run the filter and fusion over a whole corpus. Items are processed in
/// parallel but results come back in input order, and a failing item does not
/// abort the rest of the batch.
pub fn ffs_corpus(
    pairs: &[(BinaryMask, ProbMap)],
    cfg: &FfsConfig,
) -> Vec<std::result::Result<FfsOutcome, FfsItemError>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(index, (b, p))| {
            ffs_item(b, p, cfg).map_err(|source| FfsItemError { index, source })
        })
        .collect()
}

fn ffs_item(b: &BinaryMask, p: &ProbMap, cfg: &FfsConfig) -> Result<FfsOutcome> {
    let pred = binarize(p, cfg.binarize_threshold)?;
    let decision = object_filter(b, &pred, cfg)?;
    let pseudo = if decision.kept {
        Some(pixel_fusion(b, &pred)?)
    } else {
        None
    };
    Ok(FfsOutcome { decision, pseudo })
}

/// The deterministic-background mask (1-B) AND (1-P), mostly useful for
/// checks; `pixel_fusion` computes the same sets in one pass.
pub fn background_of(b: &BinaryMask, p: &BinaryMask) -> Result<BinaryMask> {
    crate::mask::intersect(&complement(b), &complement(p))
}
