//! Training loops: a single-network loop for baseline pretraining and a
//! dual-network loop for boost training.
//!
//! Batch items are evaluated in parallel, but gradients are reduced in fixed
//! index order and every random draw comes from one seeded stream, so
//! training is bit-reproducible for a given seed regardless of thread count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::loss::{
    bce_loss, dice_loss, total_loss, FeatureMap, LossTerms, RegionMask,
};
use crate::mask::TriLabelMask;
use crate::net::{augment, AdamW, AdamWConfig, NetworkState, ParamGrads};
use crate::Result;

/// One training sample: image plus tri-valued label (fully certain for
/// mask-annotated data).
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image: FeatureMap,
    pub labels: TriLabelMask,
}

/// Settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    pub augment: bool,
    pub seed: u64,
    /// Linear learning-rate warmup over this many steps.
    pub warmup_steps: usize,
    /// Cosine-decay the learning rate to zero over the run.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 8,
            optimizer: AdamWConfig::default(),
            augment: true,
            seed: 0,
            warmup_steps: 0,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    /// Scheduled learning rate for 0-based `step` out of `total` steps.
    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let base = self.optimizer.lr;
        let warm = if self.warmup_steps > 0 && step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        let decay = if self.cosine_decay && total > 0 {
            0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
        } else {
            1.0
        };
        base * warm * decay
    }
}

/// Per-step loss record, one CSV row.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub terms: LossTerms,
}

pub fn logs_to_csv(logs: &[StepLog]) -> String {
    let mut out = String::from("step,epoch,bce_a,dice_a,bce_b,dice_b,ic,total\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            l.step,
            l.epoch,
            l.terms.bce_r,
            l.terms.dice_r,
            l.terms.bce_p,
            l.terms.dice_p,
            l.terms.ic,
            l.terms.total()
        ));
    }
    out
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn prepared(item: &TrainItem, aug: bool, seed: u64) -> (FeatureMap, TriLabelMask) {
    if aug {
        augment(&item.image, &item.labels, seed)
    } else {
        (item.image.clone(), item.labels.clone())
    }
}

/// Supervised gradient on the logits: (d bce + d dice) chained through the
/// sigmoid, `dL/dz = dL/dp * p * (1 - p)`.
fn supervised_grad_logits(
    prob: &crate::mask::ProbMap,
    grad_pred: &[f64],
) -> FeatureMap {
    let values = prob
        .values()
        .iter()
        .zip(grad_pred)
        .map(|(&p, &g)| g * p * (1.0 - p))
        .collect();
    FeatureMap::from_plane(prob.size(), values)
}

fn check_finite(terms: &LossTerms) -> Result<()> {
    if !terms.total().is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss encountered: {terms:?}"
        )));
    }
    Ok(())
}

/// Train one network on fully/partially labeled items with BCE + Dice over
/// the certain region.
pub fn train_single(
    net: &mut NetworkState,
    items: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<Vec<StepLog>> {
    if items.is_empty() {
        return Err(Error::Config("cannot train on an empty item list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optimizer, net)?;
    let mut logs = Vec::new();
    let mut step = 0usize;
    let steps_per_epoch = items.len().div_ceil(cfg.batch.max(1));
    let total_steps = cfg.epochs * steps_per_epoch;
    for epoch in 0..cfg.epochs {
        let order = shuffled(items.len(), &mut rng);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<(usize, u64)> = chunk.iter().map(|&i| (i, rng.gen())).collect();
            let results: Vec<(ParamGrads, LossTerms)> = batch
                .par_iter()
                .map(|&(i, aug_seed)| -> Result<(ParamGrads, LossTerms)> {
                    let (img, labels) = prepared(&items[i], cfg.augment, aug_seed);
                    let pass = net.forward(&img)?;
                    let certain = RegionMask::from_mask(&labels.certain());
                    let target = labels.foreground();
                    let bce = bce_loss(&pass.prob, &target, &certain)?;
                    let dce = dice_loss(&pass.prob, &target, &certain)?;
                    let grad_pred: Vec<f64> = bce
                        .grad
                        .iter()
                        .zip(&dce.grad)
                        .map(|(a, b)| a + b)
                        .collect();
                    let grad_logits = supervised_grad_logits(&pass.prob, &grad_pred);
                    let grads = net.backward(&pass, &grad_logits)?;
                    let terms = LossTerms {
                        bce_r: bce.value,
                        dice_r: dce.value,
                        ..Default::default()
                    };
                    Ok((grads, terms))
                })
                .collect::<Result<Vec<_>>>()?;
            let inv = 1.0 / results.len() as f64;
            let mut acc = ParamGrads::zeros_like(net);
            let mut terms = LossTerms::default();
            for (g, t) in &results {
                acc.accumulate(g);
                terms.bce_r += t.bce_r * inv;
                terms.dice_r += t.dice_r * inv;
            }
            acc.scale(inv);
            check_finite(&terms)?;
            opt.set_lr(cfg.lr_at(step, total_steps));
            opt.step(net, &acc)?;
            step += 1;
            logs.push(StepLog { step, epoch, terms });
        }
    }
    Ok(logs)
}

/// Train two networks jointly. Every batch item passes through both
/// networks; box items additionally contribute the image-consistency term on
/// their uncertain pixels when `use_ic` is set. When both item lists are
/// nonempty, batches mix them 1:1.
pub fn train_dual(
    net_a: &mut NetworkState,
    net_b: &mut NetworkState,
    mask_items: &[TrainItem],
    box_items: &[TrainItem],
    cfg: &TrainConfig,
    use_ic: bool,
) -> Result<Vec<StepLog>> {
    if mask_items.is_empty() && box_items.is_empty() {
        return Err(Error::Config("cannot train on an empty item list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_a = AdamW::new(cfg.optimizer, net_a)?;
    let mut opt_b = AdamW::new(cfg.optimizer, net_b)?;
    let mut logs = Vec::new();
    let mut step = 0usize;

    // the nonempty "driving" list defines epoch length; the other cycles
    let (drive, side) = if box_items.is_empty() {
        (mask_items, box_items)
    } else {
        (box_items, mask_items)
    };
    let per_step_drive = if side.is_empty() {
        cfg.batch.max(1)
    } else {
        (cfg.batch / 2).max(1)
    };
    let mut side_pool: Vec<usize> = Vec::new();
    let steps_per_epoch = drive.len().div_ceil(per_step_drive);
    let total_steps = cfg.epochs * steps_per_epoch;

    for epoch in 0..cfg.epochs {
        let order = shuffled(drive.len(), &mut rng);
        for chunk in order.chunks(per_step_drive) {
            // assemble (item ref, aug seed) pairs: driving chunk + side fill
            let mut batch: Vec<(&TrainItem, u64)> = Vec::with_capacity(cfg.batch);
            for &i in chunk {
                batch.push((&drive[i], rng.gen()));
            }
            if !side.is_empty() {
                for _ in 0..chunk.len() {
                    if side_pool.is_empty() {
                        side_pool = shuffled(side.len(), &mut rng);
                    }
                    let i = side_pool.pop().expect("refilled above");
                    batch.push((&side[i], rng.gen()));
                }
            }
            let results: Vec<(ParamGrads, ParamGrads, LossTerms)> = batch
                .par_iter()
                .map(
                    |&(item, aug_seed)| -> Result<(ParamGrads, ParamGrads, LossTerms)> {
                        let (img, labels) = prepared(item, cfg.augment, aug_seed);
                        let pass_a = net_a.forward(&img)?;
                        let pass_b = net_b.forward(&img)?;
                        let (terms, gz_a, gz_b) = if use_ic {
                            let t = total_loss(
                                &pass_a.prob,
                                &pass_b.prob,
                                &pass_a.logits,
                                &pass_b.logits,
                                &labels,
                            )?;
                            let mut gz_a = supervised_grad_logits(&pass_a.prob, &t.grad_pred_r);
                            for (z, f) in gz_a.values_mut().iter_mut().zip(t.grad_f_r.values()) {
                                *z += f;
                            }
                            let mut gz_b = supervised_grad_logits(&pass_b.prob, &t.grad_pred_p);
                            for (z, f) in gz_b.values_mut().iter_mut().zip(t.grad_f_p.values()) {
                                *z += f;
                            }
                            (t.terms, gz_a, gz_b)
                        } else {
                            let certain = RegionMask::from_mask(&labels.certain());
                            let target = labels.foreground();
                            let bce_a = bce_loss(&pass_a.prob, &target, &certain)?;
                            let dice_a = dice_loss(&pass_a.prob, &target, &certain)?;
                            let bce_b = bce_loss(&pass_b.prob, &target, &certain)?;
                            let dice_b = dice_loss(&pass_b.prob, &target, &certain)?;
                            let ga: Vec<f64> = bce_a
                                .grad
                                .iter()
                                .zip(&dice_a.grad)
                                .map(|(a, b)| a + b)
                                .collect();
                            let gb: Vec<f64> = bce_b
                                .grad
                                .iter()
                                .zip(&dice_b.grad)
                                .map(|(a, b)| a + b)
                                .collect();
                            let terms = LossTerms {
                                bce_r: bce_a.value,
                                dice_r: dice_a.value,
                                bce_p: bce_b.value,
                                dice_p: dice_b.value,
                                ic: 0.0,
                            };
                            (
                                terms,
                                supervised_grad_logits(&pass_a.prob, &ga),
                                supervised_grad_logits(&pass_b.prob, &gb),
                            )
                        };
                        let grads_a = net_a.backward(&pass_a, &gz_a)?;
                        let grads_b = net_b.backward(&pass_b, &gz_b)?;
                        Ok((grads_a, grads_b, terms))
                    },
                )
                .collect::<Result<Vec<_>>>()?;
            let inv = 1.0 / results.len() as f64;
            let mut acc_a = ParamGrads::zeros_like(net_a);
            let mut acc_b = ParamGrads::zeros_like(net_b);
            let mut terms = LossTerms::default();
            for (ga, gb, t) in &results {
                acc_a.accumulate(ga);
                acc_b.accumulate(gb);
                terms.bce_r += t.bce_r * inv;
                terms.dice_r += t.dice_r * inv;
                terms.bce_p += t.bce_p * inv;
                terms.dice_p += t.dice_p * inv;
                terms.ic += t.ic * inv;
            }
            acc_a.scale(inv);
            acc_b.scale(inv);
            check_finite(&terms)?;
            let lr = cfg.lr_at(step, total_steps);
            opt_a.set_lr(lr);
            opt_b.set_lr(lr);
            opt_a.step(net_a, &acc_a)?;
            opt_b.step(net_b, &acc_b)?;
            step += 1;
            logs.push(StepLog { step, epoch, terms });
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{rasterize_boxes, BoundingBox, ImageSize};
    use crate::net::NetworkConfig;

    fn blob_item(seed: u64) -> TrainItem {
        let size = ImageSize::new(32, 32);
        let b = rasterize_boxes(
            &[BoundingBox::new(8 + (seed as usize % 5), 8, 22, 20)],
            size,
        )
        .unwrap();
        let values = b
            .bits()
            .iter()
            .map(|&v| if v { 0.85 } else { 0.15 })
            .collect();
        TrainItem {
            image: FeatureMap::new(1, size, values),
            labels: TriLabelMask::from_binary(&b),
        }
    }

    fn overfit_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            epochs: steps,
            batch: 1,
            optimizer: AdamWConfig {
                lr: 0.02,
                weight_decay: 0.0,
                ..Default::default()
            },
            augment: false,
            seed: 3,
            warmup_steps: 5,
            cosine_decay: true,
        }
    }

    #[test]
    fn single_network_overfits_one_item() {
        let mut net = NetworkState::new(NetworkConfig::arch_a(1)).unwrap();
        let items = [blob_item(0)];
        let logs = train_single(&mut net, &items, &overfit_cfg(50)).unwrap();
        assert_eq!(logs.len(), 50);
        let final_loss = logs.last().unwrap().terms.total();
        assert!(final_loss < 0.1, "final loss {final_loss}");
        let drops = logs
            .windows(2)
            .filter(|w| w[1].terms.total() < w[0].terms.total())
            .count();
        assert!(drops >= 45, "only {drops} monotone steps");
    }

    #[test]
    fn dual_overfit_drives_total_below_threshold() {
        let mut a = NetworkState::new(NetworkConfig::arch_a(1)).unwrap();
        let mut b = NetworkState::new(NetworkConfig::arch_b(2)).unwrap();
        let items = [blob_item(0)];
        let logs = train_dual(&mut a, &mut b, &items, &[], &overfit_cfg(50), true).unwrap();
        let final_loss = logs.last().unwrap().terms.total();
        assert!(final_loss < 0.2, "final loss {final_loss}");
        // fully certain labels leave nothing for the IC term
        assert!(logs.iter().all(|l| l.terms.ic == 0.0));
    }

    #[test]
    fn twin_networks_keep_ic_at_zero() {
        // same arch, same seed: features match, so the IC term stays zero
        let mut a = NetworkState::new(NetworkConfig::arch_a(9)).unwrap();
        let mut b = NetworkState::new(NetworkConfig::arch_a(9)).unwrap();
        let size = ImageSize::new(16, 16);
        let bm = rasterize_boxes(&[BoundingBox::new(2, 2, 9, 9)], size).unwrap();
        let pm = rasterize_boxes(&[BoundingBox::new(4, 4, 12, 12)], size).unwrap();
        let pseudo = crate::ffs::pixel_fusion(&bm, &pm).unwrap();
        let img = FeatureMap::new(1, size, (0..256).map(|i| (i % 17) as f64 / 17.0).collect());
        let items = [TrainItem {
            image: img,
            labels: pseudo,
        }];
        let cfg = TrainConfig {
            epochs: 5,
            batch: 1,
            augment: false,
            seed: 4,
            optimizer: AdamWConfig::with_lr(1e-3),
            ..Default::default()
        };
        let logs = train_dual(&mut a, &mut b, &[], &items, &cfg, true).unwrap();
        for l in &logs {
            assert!(l.terms.ic.abs() < 1e-24, "ic = {}", l.terms.ic);
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let items = [blob_item(0), blob_item(1), blob_item(2)];
        let run = || {
            let mut net = NetworkState::new(NetworkConfig::arch_b(5)).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch: 2,
                augment: true,
                seed: 11,
                optimizer: AdamWConfig::with_lr(1e-3),
                ..Default::default()
            };
            train_single(&mut net, &items, &cfg).unwrap();
            net.params()
                .iter()
                .flat_map(|p| p.iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        let mut net = NetworkState::new(NetworkConfig::arch_a(1)).unwrap();
        assert!(train_single(&mut net, &[], &overfit_cfg(1)).is_err());
    }
}
