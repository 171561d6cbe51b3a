//! Stage orchestration: corpus synthesis, baseline pretraining, prediction,
//! fusion filter sampling, dual-network boost training and evaluation.
//!
//! Every stage owns one directory and writes a `record.json` with a hash of
//! its configuration and input artifacts. Rerunning a stage whose hash
//! matches the existing record is a no-op, so pipelines are resumable and
//! idempotent. A run directory ends up as:
//!
//! ```text
//! run/
//!   corpus/     images, gt, annotations, manifest.jsonl
//!   pretrain/   baseline.ckpt, train_log.csv
//!   predict/    pred/<id>.pgm (16-bit probability maps)
//!   ffs/        report.jsonl, pseudo/<id>.pgm
//!   boost/      net_a.ckpt, net_b.ckpt, train_log.csv
//!   eval/       metrics.csv
//!   run_summary.json
//! ```

pub mod train;

pub use train::{train_dual, train_single, TrainConfig, TrainItem};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_manifest, read_image_feature, CorpusManifest, CorpusSpec, Split};
use crate::error::Error;
use crate::eval::{evaluate_dataset, reports_to_csv, DatasetReport};
use crate::ffs::{FfsConfig, FilterReason};
use crate::io::{checkpoint, file_sha256, pgm};
use crate::mask::{rasterize_boxes, BinaryMask, ProbMap, TriLabelMask};
use crate::net::{ArchId, NetworkConfig, NetworkState};
use crate::Result;

/// Mix a master seed with a role tag (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The three ablation settings form a monotone chain: each adds one
/// mechanism on top of the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSetting {
    Baseline,
    Ffs,
    FfsIc,
}

impl AblationSetting {
    pub const ALL: [AblationSetting; 3] =
        [AblationSetting::Baseline, AblationSetting::Ffs, AblationSetting::FfsIc];

    pub fn uses_ffs(&self) -> bool {
        !matches!(self, AblationSetting::Baseline)
    }

    pub fn uses_ic(&self) -> bool {
        matches!(self, AblationSetting::FfsIc)
    }

    pub fn label(&self) -> &'static str {
        match self {
            AblationSetting::Baseline => "baseline",
            AblationSetting::Ffs => "ffs",
            AblationSetting::FfsIc => "ffs_ic",
        }
    }
}

/// Full configuration of one pipeline run; also the schema of the
/// `run_summary.json` config echo, so any summary can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub master_seed: u64,
    pub corpus: CorpusSpec,
    /// Network that produces the coarse predictions consumed by FFS.
    pub predictor: NetworkConfig,
    pub arch_a: NetworkConfig,
    pub arch_b: NetworkConfig,
    pub pretrain: TrainConfig,
    pub boost: TrainConfig,
    pub ffs: FfsConfig,
    pub setting: AblationSetting,
    /// Number of predict -> ffs -> boost passes. Round r > 1 uses the
    /// previous round's arch-A checkpoint as the predictor.
    pub rounds: usize,
    pub eval_threshold: f64,
    /// Initialize the boost arch-A network from the pretrained predictor
    /// instead of from scratch.
    pub warm_start: bool,
}

impl StageConfig {
    /// Desk-scale reference configuration: small corpus, short schedules,
    /// learning rates sized for minutes of CPU training.
    pub fn reference(master_seed: u64) -> Self {
        StageConfig {
            master_seed,
            corpus: CorpusSpec::default(),
            predictor: NetworkConfig::arch_a(derive_seed(master_seed, 1)),
            arch_a: NetworkConfig::arch_a(derive_seed(master_seed, 2)),
            arch_b: NetworkConfig::arch_b(derive_seed(master_seed, 3)),
            pretrain: TrainConfig {
                epochs: 24,
                batch: 8,
                optimizer: crate::net::AdamWConfig {
                    lr: 2e-3,
                    ..Default::default()
                },
                augment: true,
                seed: derive_seed(master_seed, 4),
                warmup_steps: 10,
                cosine_decay: true,
            },
            boost: TrainConfig {
                epochs: 10,
                batch: 8,
                optimizer: crate::net::AdamWConfig {
                    lr: 2e-3,
                    ..Default::default()
                },
                augment: true,
                seed: derive_seed(master_seed, 5),
                warmup_steps: 10,
                cosine_decay: true,
            },
            ffs: FfsConfig::default(),
            setting: AblationSetting::FfsIc,
            rounds: 1,
            eval_threshold: 0.5,
            warm_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("round count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return Err(Error::Param {
                name: "eval_threshold",
                value: self.eval_threshold,
                requirement: "must lie in [0,1]",
            });
        }
        self.ffs.validate()?;
        self.predictor.validate()?;
        self.arch_a.validate()?;
        self.arch_b.validate()?;
        Ok(())
    }
}

/// An output artifact with its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance record of one stage execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub metrics: BTreeMap<String, f64>,
}

/// A stage result plus whether cached artifacts were reused.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub record: RunRecord,
    pub reused: bool,
}

fn record_path(stage_dir: &Path) -> PathBuf {
    stage_dir.join("record.json")
}

fn load_record(stage_dir: &Path) -> Option<RunRecord> {
    let bytes = std::fs::read(record_path(stage_dir)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn save_record(stage_dir: &Path, record: &RunRecord) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(record)
        .map_err(|e| Error::Config(format!("cannot serialize run record: {e}")))?;
    crate::io::write_bytes(&record_path(stage_dir), &bytes)
}

fn hash_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn artifact(root: &Path, path: &Path) -> Result<Artifact> {
    let rel = path.strip_prefix(root).unwrap_or(path);
    Ok(Artifact {
        path: rel.to_string_lossy().into_owned(),
        sha256: file_sha256(path)?,
    })
}

/// Run a stage body unless a record with the same config hash already
/// exists in `stage_dir`.
fn run_stage<F>(
    stage_dir: &Path,
    stage: &str,
    config_hash: String,
    inputs: Vec<Artifact>,
    body: F,
) -> Result<StageOutcome>
where
    F: FnOnce() -> Result<(Vec<PathBuf>, BTreeMap<String, f64>)>,
{
    if let Some(existing) = load_record(stage_dir) {
        if existing.config_hash == config_hash {
            return Ok(StageOutcome {
                record: existing,
                reused: true,
            });
        }
    }
    std::fs::create_dir_all(stage_dir).map_err(|e| Error::io(stage_dir, e))?;
    let (output_paths, metrics) = body()?;
    let mut outputs = Vec::with_capacity(output_paths.len());
    for p in &output_paths {
        outputs.push(artifact(stage_dir, p)?);
    }
    let record = RunRecord {
        stage: stage.to_string(),
        config_hash,
        inputs,
        outputs,
        metrics,
    };
    save_record(stage_dir, &record)?;
    Ok(StageOutcome {
        record,
        reused: false,
    })
}

fn json_of<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
}

// ---------------------------------------------------------------------------
// corpus stage
// ---------------------------------------------------------------------------

/// Generate the synthetic corpus under `stage_dir`.
pub fn stage_corpus(stage_dir: &Path, spec: &CorpusSpec) -> Result<StageOutcome> {
    let hash = hash_parts(&["corpus", &json_of(spec)?]);
    let spec = spec.clone();
    let dir = stage_dir.to_path_buf();
    run_stage(stage_dir, "corpus", hash, Vec::new(), move || {
        let manifest = crate::data::generate_corpus(&spec, &dir)?;
        let mut metrics = BTreeMap::new();
        metrics.insert("records".into(), manifest.records.len() as f64);
        Ok((vec![dir.join("manifest.jsonl")], metrics))
    })
}

fn manifest_input(manifest: &CorpusManifest) -> Result<Artifact> {
    let path = manifest.root.join("manifest.jsonl");
    Ok(Artifact {
        path: path.to_string_lossy().into_owned(),
        sha256: file_sha256(&path)?,
    })
}

// ---------------------------------------------------------------------------
// pretrain stage
// ---------------------------------------------------------------------------

/// Load mask-annotated records of `split` as fully certain training items.
pub fn load_mask_items(manifest: &CorpusManifest, split: Split) -> Result<Vec<TrainItem>> {
    let mut items = Vec::new();
    for r in manifest.split(split) {
        let mask_rel = r.mask.as_ref().ok_or_else(|| {
            Error::Config(format!("record '{}' has no mask annotation", r.id))
        })?;
        let image = read_image_feature(&manifest.resolve(&r.image))?;
        let mask = pgm::read_mask(&manifest.resolve(mask_rel))?;
        items.push(TrainItem {
            image,
            labels: TriLabelMask::from_binary(&mask),
        });
    }
    Ok(items)
}

/// Train a single baseline network on the mask-annotated split with
/// full-region BCE + Dice, and persist the checkpoint.
pub fn pretrain_baseline(
    stage_dir: &Path,
    manifest: &CorpusManifest,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<StageOutcome> {
    let input = manifest_input(manifest)?;
    let hash = hash_parts(&[
        "pretrain",
        &json_of(net_cfg)?,
        &json_of(train_cfg)?,
        &input.sha256,
    ]);
    let dir = stage_dir.to_path_buf();
    let net_cfg = net_cfg.clone();
    let train_cfg = train_cfg.clone();
    let manifest = manifest.clone();
    run_stage(stage_dir, "pretrain", hash, vec![input], move || {
        let items = load_mask_items(&manifest, Split::TrainMask)?;
        if items.is_empty() {
            return Err(Error::Config("mask-annotated training split is empty".into()));
        }
        let mut net = NetworkState::new(net_cfg)?;
        let logs = train_single(&mut net, &items, &train_cfg)?;
        let ckpt = dir.join("baseline.ckpt");
        checkpoint::save(&net, &ckpt)?;
        let log_path = dir.join("train_log.csv");
        crate::io::write_bytes(&log_path, train::logs_to_csv(&logs).as_bytes())?;
        let mut metrics = BTreeMap::new();
        metrics.insert("steps".into(), logs.len() as f64);
        if let Some(last) = logs.last() {
            metrics.insert("final_loss".into(), last.terms.total());
        }
        Ok((vec![ckpt, log_path], metrics))
    })
}

// ---------------------------------------------------------------------------
// predict stage
// ---------------------------------------------------------------------------

/// Run a checkpoint over every record of `split`, storing one losslessly
/// quantized 16-bit probability map per record. A failing record is skipped
/// and counted, not fatal.
pub fn predict_corpus(
    stage_dir: &Path,
    manifest: &CorpusManifest,
    split: Split,
    ckpt_path: &Path,
) -> Result<StageOutcome> {
    let input_manifest = manifest_input(manifest)?;
    let input_ckpt = Artifact {
        path: ckpt_path.to_string_lossy().into_owned(),
        sha256: file_sha256(ckpt_path)?,
    };
    let hash = hash_parts(&[
        "predict",
        &json_of(&split)?,
        &input_manifest.sha256,
        &input_ckpt.sha256,
    ]);
    let dir = stage_dir.to_path_buf();
    let ckpt_path = ckpt_path.to_path_buf();
    let manifest = manifest.clone();
    run_stage(
        stage_dir,
        "predict",
        hash,
        vec![input_manifest, input_ckpt],
        move || {
            let net = checkpoint::load(&ckpt_path)?;
            let records = manifest.split(split);
            use rayon::prelude::*;
            let results: Vec<(String, std::result::Result<ProbMap, Error>)> = records
                .par_iter()
                .map(|r| {
                    let out = read_image_feature(&manifest.resolve(&r.image))
                        .and_then(|img| net.forward(&img))
                        .map(|pass| pass.prob);
                    (r.id.clone(), out)
                })
                .collect();
            let mut outputs = Vec::new();
            let mut failures = Vec::new();
            for (id, result) in results {
                match result {
                    Ok(prob) => {
                        let path = dir.join("pred").join(format!("{id}.pgm"));
                        pgm::write_probmap(&path, &prob)?;
                        outputs.push(path);
                    }
                    Err(e) => failures.push((id, e.to_string())),
                }
            }
            if !failures.is_empty() {
                let mut lines = String::new();
                for (id, msg) in &failures {
                    lines.push_str(
                        &serde_json::json!({"id": id, "error": msg}).to_string(),
                    );
                    lines.push('\n');
                }
                let err_path = dir.join("errors.jsonl");
                crate::io::write_bytes(&err_path, lines.as_bytes())?;
                outputs.push(err_path);
            }
            let mut metrics = BTreeMap::new();
            metrics.insert("predicted".into(), (outputs.len() - usize::from(!failures.is_empty())) as f64);
            metrics.insert("failed".into(), failures.len() as f64);
            Ok((outputs, metrics))
        },
    )
}

// ---------------------------------------------------------------------------
// ffs stage
// ---------------------------------------------------------------------------

/// One line of the FFS report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfsReportEntry {
    pub id: String,
    pub dice: f64,
    pub kept: bool,
    pub reason: FilterReason,
}

/// Rasterize each box-split record's annotation, compare with its predicted
/// mask, and emit pseudo labels for kept records plus a JSON-lines report.
pub fn ffs_stage(
    stage_dir: &Path,
    manifest: &CorpusManifest,
    pred_dir: &Path,
    cfg: &FfsConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let input_manifest = manifest_input(manifest)?;
    let mut input_parts = vec![
        "ffs".to_string(),
        json_of(cfg)?,
        input_manifest.sha256.clone(),
    ];
    let records = manifest.split(Split::TrainBox);
    let mut pred_inputs = Vec::new();
    for r in &records {
        let p = pred_dir.join(format!("{}.pgm", r.id));
        if p.exists() {
            let a = Artifact {
                path: p.to_string_lossy().into_owned(),
                sha256: file_sha256(&p)?,
            };
            input_parts.push(a.sha256.clone());
            pred_inputs.push(a);
        }
    }
    let part_refs: Vec<&str> = input_parts.iter().map(|s| s.as_str()).collect();
    let hash = hash_parts(&part_refs);
    let mut inputs = vec![input_manifest];
    inputs.extend(pred_inputs);
    let dir = stage_dir.to_path_buf();
    let pred_dir = pred_dir.to_path_buf();
    let cfg = *cfg;
    let manifest = manifest.clone();
    run_stage(stage_dir, "ffs", hash, inputs, move || {
        let records = manifest.split(Split::TrainBox);
        let mut outputs = Vec::new();
        let mut report = String::new();
        let mut kept = 0usize;
        for r in &records {
            let pred_path = pred_dir.join(format!("{}.pgm", r.id));
            if !pred_path.exists() {
                continue; // record failed at the predict stage
            }
            let prob = pgm::read_probmap(&pred_path)?;
            let boxes = r.boxes.as_ref().ok_or_else(|| {
                Error::Config(format!("box record '{}' has no boxes", r.id))
            })?;
            let box_mask = rasterize_boxes(boxes, prob.size())?;
            let pred = crate::mask::binarize(&prob, cfg.binarize_threshold)?;
            let decision = crate::ffs::object_filter(&box_mask, &pred, &cfg)?;
            if decision.kept {
                kept += 1;
                let pseudo = crate::ffs::pixel_fusion(&box_mask, &pred)?;
                let path = dir.join("pseudo").join(format!("{}.pgm", r.id));
                pgm::write_trilabel(&path, &pseudo)?;
                outputs.push(path);
            }
            let entry = FfsReportEntry {
                id: r.id.clone(),
                dice: decision.dice_score,
                kept: decision.kept,
                reason: decision.reason,
            };
            report.push_str(&serde_json::to_string(&entry).map_err(|e| {
                Error::Config(format!("cannot serialize ffs report entry: {e}"))
            })?);
            report.push('\n');
        }
        let report_path = dir.join("report.jsonl");
        crate::io::write_bytes(&report_path, report.as_bytes())?;
        outputs.push(report_path);
        let mut metrics = BTreeMap::new();
        metrics.insert("examined".into(), records.len() as f64);
        metrics.insert("kept".into(), kept as f64);
        metrics.insert(
            "keep_rate".into(),
            if records.is_empty() {
                0.0
            } else {
                kept as f64 / records.len() as f64
            },
        );
        Ok((outputs, metrics))
    })
}

/// Parse a stage's `report.jsonl`.
pub fn load_ffs_report(ffs_dir: &Path) -> Result<Vec<FfsReportEntry>> {
    let path = ffs_dir.join("report.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        entries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.clone(),
            offset: 0,
            message: format!("bad ffs report line: {e}"),
        })?);
    }
    Ok(entries)
}

/// Load the kept pseudo-labeled items produced by [`ffs_stage`].
pub fn load_pseudo_items(
    manifest: &CorpusManifest,
    ffs_dir: &Path,
) -> Result<Vec<(String, TrainItem)>> {
    let report = load_ffs_report(ffs_dir)?;
    let by_id: BTreeMap<&str, &crate::data::ManifestRecord> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let mut items = Vec::new();
    for entry in report.iter().filter(|e| e.kept) {
        let record = by_id.get(entry.id.as_str()).ok_or_else(|| {
            Error::Config(format!("ffs report references unknown id '{}'", entry.id))
        })?;
        let image = read_image_feature(&manifest.resolve(&record.image))?;
        let labels = pgm::read_trilabel(&ffs_dir.join("pseudo").join(format!("{}.pgm", entry.id)))?;
        items.push((entry.id.clone(), TrainItem { image, labels }));
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// boost stage
// ---------------------------------------------------------------------------

/// Train the two boost networks on mask items plus kept pseudo-labeled box
/// items. `warm_start` initializes the arch-A network from a checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn boost_train(
    stage_dir: &Path,
    manifest: &CorpusManifest,
    ffs_dir: &Path,
    cfg_a: &NetworkConfig,
    cfg_b: &NetworkConfig,
    train_cfg: &TrainConfig,
    use_ic: bool,
    warm_start: Option<&Path>,
) -> Result<StageOutcome> {
    let input_manifest = manifest_input(manifest)?;
    let report_art = Artifact {
        path: ffs_dir.join("report.jsonl").to_string_lossy().into_owned(),
        sha256: file_sha256(&ffs_dir.join("report.jsonl"))?,
    };
    let warm_hash = match warm_start {
        Some(p) => file_sha256(p)?,
        None => "scratch".to_string(),
    };
    let hash = hash_parts(&[
        "boost",
        &json_of(cfg_a)?,
        &json_of(cfg_b)?,
        &json_of(train_cfg)?,
        &use_ic.to_string(),
        &input_manifest.sha256,
        &report_art.sha256,
        &warm_hash,
    ]);
    let mut inputs = vec![input_manifest, report_art];
    let pseudo_items = load_pseudo_items(manifest, ffs_dir)?;
    for (id, _) in &pseudo_items {
        let p = ffs_dir.join("pseudo").join(format!("{id}.pgm"));
        inputs.push(Artifact {
            path: p.to_string_lossy().into_owned(),
            sha256: file_sha256(&p)?,
        });
    }
    let dir = stage_dir.to_path_buf();
    let cfg_a = cfg_a.clone();
    let cfg_b = cfg_b.clone();
    let train_cfg = train_cfg.clone();
    let manifest = manifest.clone();
    let warm_start = warm_start.map(|p| p.to_path_buf());
    run_stage(stage_dir, "boost", hash, inputs, move || {
        if pseudo_items.is_empty() {
            return Err(Error::EmptyPseudoSet);
        }
        let mask_items = load_mask_items(&manifest, Split::TrainMask)?;
        let box_items: Vec<TrainItem> =
            pseudo_items.iter().map(|(_, item)| item.clone()).collect();
        let mut net_a = match &warm_start {
            Some(ckpt) => {
                let loaded = checkpoint::load(ckpt)?;
                if loaded.config().arch != cfg_a.arch {
                    return Err(Error::Config(
                        "warm-start checkpoint architecture does not match arch A".into(),
                    ));
                }
                loaded
            }
            None => NetworkState::new(cfg_a)?,
        };
        let mut net_b = NetworkState::new(cfg_b)?;
        let logs = train_dual(
            &mut net_a,
            &mut net_b,
            &mask_items,
            &box_items,
            &train_cfg,
            use_ic,
        )?;
        let ckpt_a = dir.join("net_a.ckpt");
        let ckpt_b = dir.join("net_b.ckpt");
        checkpoint::save(&net_a, &ckpt_a)?;
        checkpoint::save(&net_b, &ckpt_b)?;
        let log_path = dir.join("train_log.csv");
        crate::io::write_bytes(&log_path, train::logs_to_csv(&logs).as_bytes())?;
        let mut metrics = BTreeMap::new();
        metrics.insert("steps".into(), logs.len() as f64);
        metrics.insert("mask_items".into(), mask_items.len() as f64);
        metrics.insert("box_items".into(), box_items.len() as f64);
        if let Some(last) = logs.last() {
            metrics.insert("final_loss".into(), last.terms.total());
        }
        Ok((vec![ckpt_a, ckpt_b, log_path], metrics))
    })
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

/// Forward a checkpoint over the test split and score it against the hidden
/// ground truth.
pub fn evaluate_checkpoint(
    manifest: &CorpusManifest,
    ckpt_path: &Path,
    threshold: f64,
    name: &str,
) -> Result<DatasetReport> {
    let net = checkpoint::load(ckpt_path)?;
    let records = manifest.split(Split::Test);
    if records.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    use rayon::prelude::*;
    let pairs: Vec<(ProbMap, BinaryMask)> = records
        .par_iter()
        .map(|r| -> Result<(ProbMap, BinaryMask)> {
            let img = read_image_feature(&manifest.resolve(&r.image))?;
            let pass = net.forward(&img)?;
            let gt = pgm::read_mask(&manifest.resolve(&r.gt))?;
            Ok((pass.prob, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    evaluate_dataset(name, &preds, &gts, threshold)
}

/// Evaluate named checkpoints on the test split and write `metrics.csv`.
pub fn eval_stage(
    stage_dir: &Path,
    manifest: &CorpusManifest,
    checkpoints: &[(String, PathBuf)],
    threshold: f64,
) -> Result<(StageOutcome, Vec<DatasetReport>)> {
    let input_manifest = manifest_input(manifest)?;
    let mut parts = vec![
        "eval".to_string(),
        format!("{threshold}"),
        input_manifest.sha256.clone(),
    ];
    let mut inputs = vec![input_manifest];
    for (name, path) in checkpoints {
        let a = Artifact {
            path: path.to_string_lossy().into_owned(),
            sha256: file_sha256(path)?,
        };
        parts.push(name.clone());
        parts.push(a.sha256.clone());
        inputs.push(a);
    }
    let refs: Vec<&str> = parts.iter().map(|s| s.as_str()).collect();
    let hash = hash_parts(&refs);
    let dir = stage_dir.to_path_buf();
    let manifest_c = manifest.clone();
    let checkpoints_c = checkpoints.to_vec();
    let outcome = run_stage(stage_dir, "eval", hash, inputs, move || {
        let mut reports = Vec::new();
        for (name, path) in &checkpoints_c {
            reports.push(evaluate_checkpoint(&manifest_c, path, threshold, name)?);
        }
        let csv = reports_to_csv(&reports)?;
        let csv_path = dir.join("metrics.csv");
        crate::io::write_bytes(&csv_path, csv.as_bytes())?;
        let mut metrics = BTreeMap::new();
        for r in &reports {
            metrics.insert(format!("dice/{}", r.name), r.mean_dice);
            metrics.insert(format!("iou/{}", r.name), r.mean_iou);
        }
        Ok((vec![csv_path], metrics))
    })?;
    // reports are cheap to recompute when the stage was cached
    let mut reports = Vec::new();
    for (name, path) in checkpoints {
        reports.push(evaluate_checkpoint(manifest, path, threshold, name)?);
    }
    Ok((outcome, reports))
}

// ---------------------------------------------------------------------------
// full pipeline
// ---------------------------------------------------------------------------

/// Config echo plus stage provenance, written as `run_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: StageConfig,
    pub stages: Vec<RunRecord>,
}

/// Execute the staged pipeline under `run_dir` according to the config's
/// ablation setting. Completed stages are skipped on rerun.
pub fn run_pipeline(run_dir: &Path, cfg: &StageConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let mut stages = Vec::new();

    let corpus = stage_corpus(&run_dir.join("corpus"), &cfg.corpus)?;
    stages.push(corpus.record.clone());
    let manifest = load_manifest(&run_dir.join("corpus").join("manifest.jsonl"))?;

    let pretrain_dir = run_dir.join("pretrain");
    let pretrain = pretrain_baseline(&pretrain_dir, &manifest, &cfg.predictor, &cfg.pretrain)?;
    stages.push(pretrain.record.clone());
    let baseline_ckpt = pretrain_dir.join("baseline.ckpt");

    let mut eval_targets: Vec<(String, PathBuf)> = Vec::new();
    if cfg.setting.uses_ffs() {
        let mut predictor_ckpt = baseline_ckpt.clone();
        for round in 1..=cfg.rounds {
            let prefix = if round == 1 {
                String::new()
            } else {
                format!("round{round}_")
            };
            let predict_dir = run_dir.join(format!("{prefix}predict"));
            let predict =
                predict_corpus(&predict_dir, &manifest, Split::TrainBox, &predictor_ckpt)?;
            stages.push(predict.record.clone());

            let ffs_dir = run_dir.join(format!("{prefix}ffs"));
            let ffs = ffs_stage(&ffs_dir, &manifest, &predict_dir.join("pred"), &cfg.ffs)?;
            stages.push(ffs.record.clone());

            let boost_dir = run_dir.join(format!("{prefix}boost"));
            let warm = cfg.warm_start.then_some(baseline_ckpt.as_path());
            let boost = boost_train(
                &boost_dir,
                &manifest,
                &ffs_dir,
                &cfg.arch_a,
                &cfg.arch_b,
                &cfg.boost,
                cfg.setting.uses_ic(),
                warm,
            )?;
            stages.push(boost.record.clone());
            predictor_ckpt = boost_dir.join("net_a.ckpt");
            if round == cfg.rounds {
                eval_targets.push(("arch_a".into(), boost_dir.join("net_a.ckpt")));
                eval_targets.push(("arch_b".into(), boost_dir.join("net_b.ckpt")));
            }
        }
    } else {
        eval_targets.push(("baseline".into(), baseline_ckpt.clone()));
    }

    let (eval, _reports) = eval_stage(
        &run_dir.join("eval"),
        &manifest,
        &eval_targets,
        cfg.eval_threshold,
    )?;
    stages.push(eval.record.clone());

    let summary = RunSummary {
        config: cfg.clone(),
        stages,
    };
    let bytes = serde_json::to_vec_pretty(&summary)
        .map_err(|e| Error::Config(format!("cannot serialize run summary: {e}")))?;
    crate::io::write_bytes(&run_dir.join("run_summary.json"), &bytes)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------

/// Grid description: the reference corpus plus per-seed training schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub corpus: CorpusSpec,
    pub seeds: Vec<u64>,
    pub pretrain: TrainConfig,
    pub boost: TrainConfig,
    pub ffs: FfsConfig,
    pub eval_threshold: f64,
}

impl AblationSpec {
    pub fn reference(seeds: Vec<u64>) -> Self {
        let r = StageConfig::reference(0);
        AblationSpec {
            corpus: CorpusSpec::default(),
            seeds,
            pretrain: r.pretrain,
            boost: r.boost,
            ffs: FfsConfig::default(),
            eval_threshold: 0.5,
        }
    }
}

/// One (seed, setting, arch) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSeedRow {
    pub seed: u64,
    pub setting: AblationSetting,
    pub arch: ArchId,
    pub dice: f64,
    pub iou: f64,
}

/// Seed-averaged scores for one setting, both architectures side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub dice_a: f64,
    pub iou_a: f64,
    pub dice_b: f64,
    pub iou_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub per_seed: Vec<PerSeedRow>,
}

pub fn ablation_to_csv(result: &AblationResult) -> String {
    let mut out = String::from("setting,dice_a,iou_a,dice_b,iou_b\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.setting.label(),
            r.dice_a,
            r.iou_a,
            r.dice_b,
            r.iou_b
        ));
    }
    out
}

pub fn per_seed_to_csv(result: &AblationResult) -> String {
    let mut out = String::from("seed,setting,arch,dice,iou\n");
    for r in &result.per_seed {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.seed,
            r.setting.label(),
            r.arch,
            r.dice,
            r.iou
        ));
    }
    out
}

/// Run baseline / +FFS / +FFS+IC for both architectures across seeds.
///
/// The corpus is generated once; per seed, each architecture is pretrained
/// for the baseline row, the arch-A baseline supplies FFS predictions, and
/// the two boost settings share network and schedule seeds so the only
/// difference between them is the image-consistency term.
pub fn run_ablation(dir: &Path, spec: &AblationSpec) -> Result<AblationResult> {
    if spec.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    stage_corpus(&dir.join("corpus"), &spec.corpus)?;
    let manifest = load_manifest(&dir.join("corpus").join("manifest.jsonl"))?;

    let mut per_seed = Vec::new();
    for &seed in &spec.seeds {
        let sdir = dir.join(format!("seed{seed}"));
        let mut pre_train_cfg = spec.pretrain.clone();
        pre_train_cfg.seed = derive_seed(seed, 10);

        // per-arch baselines
        let cfg_a = NetworkConfig::arch_a(derive_seed(seed, 1));
        let cfg_b = NetworkConfig::arch_b(derive_seed(seed, 2));
        let pre_a = sdir.join("pretrain_a");
        let pre_b = sdir.join("pretrain_b");
        pretrain_baseline(&pre_a, &manifest, &cfg_a, &pre_train_cfg)?;
        let mut pre_train_cfg_b = pre_train_cfg.clone();
        pre_train_cfg_b.seed = derive_seed(seed, 11);
        pretrain_baseline(&pre_b, &manifest, &cfg_b, &pre_train_cfg_b)?;

        for (arch, ckpt) in [
            (ArchId::A, pre_a.join("baseline.ckpt")),
            (ArchId::B, pre_b.join("baseline.ckpt")),
        ] {
            let report = evaluate_checkpoint(
                &manifest,
                &ckpt,
                spec.eval_threshold,
                &format!("baseline_{arch}"),
            )?;
            per_seed.push(PerSeedRow {
                seed,
                setting: AblationSetting::Baseline,
                arch,
                dice: report.mean_dice,
                iou: report.mean_iou,
            });
        }

        // shared predictions + pseudo labels from the arch-A baseline
        let predict_dir = sdir.join("predict");
        predict_corpus(
            &predict_dir,
            &manifest,
            Split::TrainBox,
            &pre_a.join("baseline.ckpt"),
        )?;
        let ffs_dir = sdir.join("ffs");
        ffs_stage(&ffs_dir, &manifest, &predict_dir.join("pred"), &spec.ffs)?;

        // boost twice with identical seeds; only the IC flag differs
        let boost_a_cfg = NetworkConfig::arch_a(derive_seed(seed, 3));
        let boost_b_cfg = NetworkConfig::arch_b(derive_seed(seed, 4));
        let mut boost_train_cfg = spec.boost.clone();
        boost_train_cfg.seed = derive_seed(seed, 12);
        for setting in [AblationSetting::Ffs, AblationSetting::FfsIc] {
            let bdir = sdir.join(format!("boost_{}", setting.label()));
            boost_train(
                &bdir,
                &manifest,
                &ffs_dir,
                &boost_a_cfg,
                &boost_b_cfg,
                &boost_train_cfg,
                setting.uses_ic(),
                None,
            )?;
            for (arch, ckpt) in [
                (ArchId::A, bdir.join("net_a.ckpt")),
                (ArchId::B, bdir.join("net_b.ckpt")),
            ] {
                let report = evaluate_checkpoint(
                    &manifest,
                    &ckpt,
                    spec.eval_threshold,
                    &format!("{}_{arch}", setting.label()),
                )?;
                per_seed.push(PerSeedRow {
                    seed,
                    setting,
                    arch,
                    dice: report.mean_dice,
                    iou: report.mean_iou,
                });
            }
        }
    }

    let mut rows = Vec::new();
    for setting in AblationSetting::ALL {
        let mean = |arch: ArchId, f: fn(&PerSeedRow) -> f64| -> f64 {
            let vals: Vec<f64> = per_seed
                .iter()
                .filter(|r| r.setting == setting && r.arch == arch)
                .map(f)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        rows.push(AblationRow {
            setting,
            dice_a: mean(ArchId::A, |r| r.dice),
            iou_a: mean(ArchId::A, |r| r.iou),
            dice_b: mean(ArchId::B, |r| r.dice),
            iou_b: mean(ArchId::B, |r| r.iou),
        });
    }
    let result = AblationResult { rows, per_seed };
    crate::io::write_bytes(
        &dir.join("ablation.csv"),
        ablation_to_csv(&result).as_bytes(),
    )?;
    crate::io::write_bytes(
        &dir.join("ablation_seeds.csv"),
        per_seed_to_csv(&result).as_bytes(),
    )?;
    Ok(result)
}
