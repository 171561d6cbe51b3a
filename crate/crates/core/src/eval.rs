//! Metric aggregation: per-dataset mean Dice/IoU, image-count-weighted
//! averages across datasets, and Dice-vs-binarization-threshold curves.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mask::{binarize, dice, iou, BinaryMask, ProbMap};
use crate::Result;

/// Mean metrics for one evaluation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub count: usize,
    pub mean_dice: f64,
    pub mean_iou: f64,
}

/// Mean Dice at each binarization threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    pub mean_dice: Vec<f64>,
}

/// Mean Dice/IoU of binarized predictions against ground truth.
pub fn evaluate_dataset(
    name: &str,
    preds: &[ProbMap],
    gts: &[BinaryMask],
    threshold: f64,
) -> Result<DatasetReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Param {
            name: "preds/gts",
            value: preds.len() as f64,
            requirement: "lists must be nonempty and aligned",
        });
    }
    let mut dice_sum = 0.0;
    let mut iou_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let bin = binarize(p, threshold)?;
        dice_sum += dice(&bin, g)?;
        iou_sum += iou(&bin, g)?;
    }
    let n = preds.len() as f64;
    Ok(DatasetReport {
        name: name.to_string(),
        count: preds.len(),
        mean_dice: dice_sum / n,
        mean_iou: iou_sum / n,
    })
}

/// Image-count-weighted average of (dice, iou) across datasets.
pub fn weighted_average(reports: &[DatasetReport]) -> Result<(f64, f64)> {
    if reports.is_empty() {
        return Err(Error::Param {
            name: "reports",
            value: 0.0,
            requirement: "need at least one dataset report",
        });
    }
    let total: usize = reports.iter().map(|r| r.count).sum();
    let dice = reports
        .iter()
        .map(|r| r.mean_dice * r.count as f64)
        .sum::<f64>()
        / total as f64;
    let iou = reports
        .iter()
        .map(|r| r.mean_iou * r.count as f64)
        .sum::<f64>()
        / total as f64;
    Ok((dice, iou))
}

/// Default threshold grid: 256 evenly spaced values covering [0, 1].
pub fn default_threshold_grid() -> Vec<f64> {
    (0..256).map(|i| i as f64 / 255.0).collect()
}

/// Mean Dice of the prediction set at each threshold.
pub fn threshold_curve(
    preds: &[ProbMap],
    gts: &[BinaryMask],
    thresholds: &[f64],
) -> Result<ThresholdCurve> {
    for w in thresholds.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Param {
                name: "thresholds",
                value: w[1],
                requirement: "must be strictly ascending",
            });
        }
    }
    if let (Some(&first), Some(&last)) = (thresholds.first(), thresholds.last()) {
        if !(0.0..=1.0).contains(&first) || !(0.0..=1.0).contains(&last) {
            return Err(Error::Param {
                name: "thresholds",
                value: first,
                requirement: "must lie in [0,1]",
            });
        }
    }
    let mut mean_dice = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let report = evaluate_dataset("curve", preds, gts, t)?;
        mean_dice.push(report.mean_dice);
    }
    Ok(ThresholdCurve {
        thresholds: thresholds.to_vec(),
        mean_dice,
    })
}

/// CSV with one row per dataset plus a weighted-average row.
pub fn reports_to_csv(reports: &[DatasetReport]) -> Result<String> {
    let (wd, wi) = weighted_average(reports)?;
    let mut out = String::from("dataset,count,dice,iou\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.name, r.count, r.mean_dice, r.mean_iou
        ));
    }
    let total: usize = reports.iter().map(|r| r.count).sum();
    out.push_str(&format!("wAVG,{},{:.6},{:.6}\n", total, wd, wi));
    Ok(out)
}

/// Two-column CSV for external plotting.
pub fn curve_to_csv(curve: &ThresholdCurve) -> String {
    let mut out = String::from("threshold,mean_dice\n");
    for (t, d) in curve.thresholds.iter().zip(&curve.mean_dice) {
        out.push_str(&format!("{:.8},{:.6}\n", t, d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{rasterize_boxes, BoundingBox, ImageSize};

    fn sz(h: usize, w: usize) -> ImageSize {
        ImageSize::new(h, w)
    }

    fn report(name: &str, count: usize, dice: f64, iou: f64) -> DatasetReport {
        DatasetReport {
            name: name.into(),
            count,
            mean_dice: dice,
            mean_iou: iou,
        }
    }

    #[test]
    fn exact_predictions_score_one() {
        let gt = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 2)], sz(4, 4)).unwrap();
        let pred = ProbMap::new(
            sz(4, 4),
            gt.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let r = evaluate_dataset("t", &[pred], &[gt], 0.5).unwrap();
        assert_eq!(r.mean_dice, 1.0);
        assert_eq!(r.mean_iou, 1.0);
    }

    #[test]
    fn zero_predictions_score_zero_on_nonempty_gt() {
        let gt = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 2)], sz(4, 4)).unwrap();
        let pred = ProbMap::constant(sz(4, 4), 0.0).unwrap();
        let r = evaluate_dataset("t", &[pred], &[gt], 0.5).unwrap();
        assert_eq!(r.mean_dice, 0.0);
        assert_eq!(r.mean_iou, 0.0);
    }

    #[test]
    fn per_image_metrics_average() {
        // image 1: pred == gt (dice 1); image 2: half-overlapping boxes
        let gt1 = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 2)], sz(4, 4)).unwrap();
        let pred1 = ProbMap::new(
            sz(4, 4),
            gt1.bits().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect(),
        )
        .unwrap();
        let gt2 = rasterize_boxes(&[BoundingBox::new(0, 0, 4, 2)], sz(4, 4)).unwrap();
        let pred2_mask = rasterize_boxes(&[BoundingBox::new(0, 1, 4, 3)], sz(4, 4)).unwrap();
        let pred2 = ProbMap::new(
            sz(4, 4),
            pred2_mask.bits().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect(),
        )
        .unwrap();
        let r = evaluate_dataset("t", &[pred1, pred2], &[gt1, gt2], 0.5).unwrap();
        assert!((r.mean_dice - (1.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_list_is_a_parameter_error() {
        assert!(evaluate_dataset("t", &[], &[], 0.5).is_err());
    }

    #[test]
    fn single_report_weighted_average_is_identity() {
        let r = report("one", 42, 0.8, 0.7);
        let (d, i) = weighted_average(&[r]).unwrap();
        assert_eq!(d, 0.8);
        assert_eq!(i, 0.7);
    }

    #[test]
    fn weighted_average_reproduces_printed_rows() {
        // per-dataset scores with their image counts; the weighted means
        // match the published three-decimal values within rounding
        let counts = [380usize, 100, 62, 60, 196];
        let unet_dice = [0.512, 0.818, 0.823, 0.710, 0.398];
        let unet_iou = [0.444, 0.746, 0.750, 0.627, 0.335];
        let reports: Vec<DatasetReport> = (0..5)
            .map(|i| report(&format!("d{i}"), counts[i], unet_dice[i], unet_iou[i]))
            .collect();
        let (d, i) = weighted_average(&reports).unwrap();
        assert!((d - 0.561).abs() <= 0.001, "dice wavg {d}");
        assert!((i - 0.493).abs() <= 0.001, "iou wavg {i}");
    }

    #[test]
    fn weighted_average_is_order_and_split_invariant() {
        let a = report("a", 10, 0.6, 0.5);
        let b = report("b", 30, 0.8, 0.7);
        let (d1, i1) = weighted_average(&[a.clone(), b.clone()]).unwrap();
        let (d2, i2) = weighted_average(&[b.clone(), a.clone()]).unwrap();
        assert!((d1 - d2).abs() < 1e-15);
        assert!((i1 - i2).abs() < 1e-15);
        // splitting one dataset into two with the same totals
        let b1 = report("b1", 12, 0.8, 0.7);
        let b2 = report("b2", 18, 0.8, 0.7);
        let (d3, _) = weighted_average(&[a, b1, b2]).unwrap();
        assert!((d1 - d3).abs() < 1e-15);
    }

    #[test]
    fn hard_predictions_give_flat_curves() {
        let gt = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 4)], sz(4, 4)).unwrap();
        let pred = ProbMap::new(
            sz(4, 4),
            gt.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        let curve = threshold_curve(&[pred], &[gt], &grid).unwrap();
        for d in &curve.mean_dice {
            assert_eq!(*d, 1.0);
        }
    }

    #[test]
    fn constant_half_prediction_jumps_at_half() {
        // below 0.5 the prediction binarizes to all ones, at/above to empty
        let size = sz(4, 4);
        let gt = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 2)], size).unwrap();
        let pred = ProbMap::constant(size, 0.5).unwrap();
        let g = gt.count() as f64;
        let curve = threshold_curve(&[pred], &[gt], &[0.25, 0.5, 0.75]).unwrap();
        let n = size.pixels() as f64;
        assert!((curve.mean_dice[0] - 2.0 * g / (g + n)).abs() < 1e-12);
        assert_eq!(curve.mean_dice[1], 0.0);
        assert_eq!(curve.mean_dice[2], 0.0);
    }

    #[test]
    fn curve_agrees_with_evaluate_dataset() {
        let gt = rasterize_boxes(&[BoundingBox::new(1, 1, 3, 3)], sz(4, 4)).unwrap();
        let pred = ProbMap::new(sz(4, 4), (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let curve = threshold_curve(&[pred.clone()], &[gt.clone()], &[0.3, 0.6]).unwrap();
        for (k, &t) in [0.3, 0.6].iter().enumerate() {
            let r = evaluate_dataset("x", &[pred.clone()], &[gt.clone()], t).unwrap();
            assert_eq!(curve.mean_dice[k], r.mean_dice);
        }
    }

    #[test]
    fn non_ascending_thresholds_rejected() {
        let gt = rasterize_boxes(&[BoundingBox::new(0, 0, 1, 1)], sz(2, 2)).unwrap();
        let pred = ProbMap::constant(sz(2, 2), 0.5).unwrap();
        assert!(threshold_curve(&[pred], &[gt], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn default_grid_has_256_ascending_entries() {
        let g = default_threshold_grid();
        assert_eq!(g.len(), 256);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
