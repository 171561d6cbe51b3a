//! Corpus manifests and annotation IO.
//!
//! A corpus lives in one directory: `images/` (8-bit PGM), `gt/` (hidden
//! ground-truth masks, one per record, never used as a training annotation
//! for the box split), `annotations/` (mask annotations for the mask split)
//! and `manifest.jsonl` with one JSON record per line. All paths inside the
//! manifest are relative to the manifest's directory.

pub mod synth;

pub use synth::{generate_corpus, CorpusSpec, NoiseFractions};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::loss::FeatureMap;
use crate::mask::BoundingBox;
use crate::Result;

/// How a record is annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Mask,
    Box,
}

/// Which split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainMask,
    TrainBox,
    Test,
}

/// Injected annotation defect, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Clean,
    Blur,
    NoPolyp,
    WrongLabel,
    ImpreciseBox,
}

/// One corpus entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub kind: AnnotationKind,
    pub split: Split,
    pub noise: NoiseMode,
    /// Box annotations as `[x0,y0,x1,y1]` arrays; present for box records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BoundingBox>>,
    /// Mask annotation path; present for mask records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Hidden ground truth, held out from box-split training.
    pub gt: PathBuf,
}

/// All records of one corpus plus the directory they resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Enforce the manifest invariants that need only the records themselves.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate record id '{}'", r.id)));
            }
            match r.kind {
                AnnotationKind::Mask if r.mask.is_none() => {
                    return Err(Error::Config(format!(
                        "record '{}' is mask-annotated but has no mask path",
                        r.id
                    )));
                }
                AnnotationKind::Box if r.boxes.is_none() => {
                    return Err(Error::Config(format!(
                        "record '{}' is box-annotated but has no boxes",
                        r.id
                    )));
                }
                _ => {}
            }
            if r.split == Split::Test && r.mask.is_none() {
                return Err(Error::Config(format!(
                    "test record '{}' carries no ground-truth mask annotation",
                    r.id
                )));
            }
        }
        Ok(())
    }
}

/// Write one JSON record per line.
pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in &manifest.records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::Config(format!("cannot serialize manifest record: {e}")))?;
        out.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Load a JSON-lines manifest; rejects duplicate ids and kind/path
/// inconsistencies. Parse failures report the byte offset into the file.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: e.valid_up_to(),
        message: "manifest is not UTF-8".into(),
    })?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches('\n').trim_end_matches('\r');
        if !trimmed.trim().is_empty() {
            let record: ManifestRecord =
                serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    offset: offset + e.column().saturating_sub(1),
                    message: format!("bad manifest record: {e}"),
                })?;
            records.push(record);
        }
        offset += line.len();
    }
    let manifest = CorpusManifest {
        root: path.parent().unwrap_or_else(|| Path::new("")).to_path_buf(),
        records,
    };
    manifest.validate().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    Ok(manifest)
}

/// Load an 8-bit grayscale image as a single-channel feature map in [0, 1].
pub fn read_image_feature(path: &Path) -> Result<FeatureMap> {
    let (size, data) = crate::io::pgm::read_gray8(path)?;
    let values = data.iter().map(|&v| v as f64 / 255.0).collect();
    Ok(FeatureMap::new(1, size, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BoundingBox;

    fn record(id: &str) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            image: PathBuf::from(format!("images/{id}.pgm")),
            kind: AnnotationKind::Box,
            split: Split::TrainBox,
            noise: NoiseMode::Clean,
            boxes: Some(vec![BoundingBox::new(1, 2, 5, 9)]),
            mask: None,
            gt: PathBuf::from(format!("gt/{id}.pgm")),
        }
    }

    #[test]
    fn manifest_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let manifest = CorpusManifest {
            root: dir.path().to_path_buf(),
            records: vec![record("a"), record("b")],
        };
        save_manifest(&manifest, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records, manifest.records);
        save_manifest(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn boxes_serialize_as_integer_arrays() {
        let r = record("a");
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("[1,2,5,9]"), "{json}");
    }

    #[test]
    fn duplicate_ids_are_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let manifest = CorpusManifest {
            root: dir.path().to_path_buf(),
            records: vec![record("a"), record("a")],
        };
        save_manifest(&manifest, &path).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_line_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let good = serde_json::to_string(&record("a")).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match load_manifest(&path).unwrap_err() {
            Error::Parse { offset, .. } => {
                assert!(offset >= good.len() + 1, "offset {offset} should be in line 2")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn test_records_must_carry_masks() {
        let mut r = record("t");
        r.split = Split::Test;
        let manifest = CorpusManifest {
            root: PathBuf::new(),
            records: vec![r],
        };
        assert!(manifest.validate().is_err());
    }
}
