//! Synthetic corpus generation.
//!
//! Renders grayscale scenes of 1-3 bright blobs (ellipses with a sinusoidal
//! boundary perturbation, so a tight box always over-covers the mask) on a
//! textured background, then derives annotations per split: exact masks for
//! the mask split, tight boxes for the box split and the test split's hidden
//! ground truth. Box-split records optionally carry one injected defect:
//! a blurred image, a background-only frame with a spurious box, a box copied
//! from a different frame, or a jittered box.
//!
//! Generation is deterministic in the seed; every record draws from its own
//! RNG stream, so corpora are byte-identical across runs.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{AnnotationKind, CorpusManifest, ManifestRecord, NoiseMode, Split};
use crate::error::Error;
use crate::io::pgm;
use crate::mask::{BinaryMask, BoundingBox, ImageSize};
use crate::Result;

/// Requested noise fractions for the box split; the remainder is clean.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseFractions {
    pub blur: f64,
    pub no_polyp: f64,
    pub wrong_label: f64,
    pub imprecise_box: f64,
}

impl Default for NoiseFractions {
    fn default() -> Self {
        NoiseFractions {
            blur: 0.10,
            no_polyp: 0.10,
            wrong_label: 0.15,
            imprecise_box: 0.25,
        }
    }
}

impl NoiseFractions {
    pub fn none() -> Self {
        NoiseFractions {
            blur: 0.0,
            no_polyp: 0.0,
            wrong_label: 0.0,
            imprecise_box: 0.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.blur + self.no_polyp + self.wrong_label + self.imprecise_box
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("blur", self.blur),
            ("no_polyp", self.no_polyp),
            ("wrong_label", self.wrong_label),
            ("imprecise_box", self.imprecise_box),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Param {
                    name: match name {
                        "blur" => "noise.blur",
                        "no_polyp" => "noise.no_polyp",
                        "wrong_label" => "noise.wrong_label",
                        _ => "noise.imprecise_box",
                    },
                    value: v,
                    requirement: "must lie in [0,1]",
                });
            }
        }
        if self.sum() > 1.0 + 1e-12 {
            return Err(Error::Param {
                name: "noise",
                value: self.sum(),
                requirement: "fractions must sum to at most 1 (remainder is clean)",
            });
        }
        Ok(())
    }
}

/// Corpus shape: split sizes, image size, noise mix and seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusSpec {
    pub height: usize,
    pub width: usize,
    pub mask_train: usize,
    pub box_train: usize,
    pub test: usize,
    pub noise: NoiseFractions,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            height: 64,
            width: 64,
            mask_train: 60,
            box_train: 400,
            test: 100,
            noise: NoiseFractions::default(),
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.height, self.width)
    }
}

/// One blob: a rotated ellipse whose boundary radius is modulated by a
/// sinusoid, guaranteeing the mask is strictly smaller than its tight box.
#[derive(Debug, Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    theta: f64,
    lobes: u32,
    amp: f64,
    phase: f64,
    contrast: f64,
}

impl Blob {
    /// Signed radial coordinate: <= 1 means inside.
    fn radial(&self, y: f64, x: f64) -> f64 {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let (sin_t, cos_t) = self.theta.sin_cos();
        let u = cos_t * dx + sin_t * dy;
        let v = -sin_t * dx + cos_t * dy;
        let r = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
        let ang = v.atan2(u);
        let boundary = 1.0 + self.amp * (self.lobes as f64 * ang + self.phase).sin();
        r / boundary
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        self.radial(y as f64 + 0.5, x as f64 + 0.5) <= 1.0
    }
}

/// A fully sampled scene, before rendering.
#[derive(Debug, Clone)]
struct Scene {
    blobs: Vec<Blob>,
    bg_seedlets: [f64; 6],
    noise_seed: u64,
}

fn sample_blob(rng: &mut ChaCha8Rng, size: ImageSize) -> Blob {
    let max_r = ((size.height.min(size.width) as f64) / 5.0).clamp(6.0, 14.0);
    let rx = rng.gen_range(5.5..max_r);
    let aspect = rng.gen_range(0.65..1.0);
    let ry = (rx * aspect).max(4.0);
    let reach = rx.max(ry) * 1.2 + 2.0;
    let cy = rng.gen_range(reach..(size.height as f64 - reach));
    let cx = rng.gen_range(reach..(size.width as f64 - reach));
    Blob {
        cy,
        cx,
        ry,
        rx,
        theta: rng.gen_range(0.0..std::f64::consts::PI),
        lobes: rng.gen_range(3..6),
        amp: rng.gen_range(0.05..0.15),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        contrast: rng.gen_range(55.0..95.0),
    }
}

fn sample_scene(rng: &mut ChaCha8Rng, size: ImageSize, with_blobs: bool) -> Scene {
    let n = if with_blobs { rng.gen_range(1..=3) } else { 0 };
    let blobs = (0..n).map(|_| sample_blob(rng, size)).collect();
    let bg_seedlets = [
        rng.gen_range(0.05..0.25),
        rng.gen_range(0.05..0.25),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(18.0..32.0),
        rng.gen_range(80.0..110.0),
    ];
    Scene {
        blobs,
        bg_seedlets,
        noise_seed: rng.gen(),
    }
}

/// Ground-truth mask: union of blob interiors.
fn render_mask(scene: &Scene, size: ImageSize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(size);
    for blob in &scene.blobs {
        let y0 = ((blob.cy - blob.ry * 1.2 - 1.0).floor().max(0.0)) as usize;
        let y1 = ((blob.cy + blob.ry * 1.2 + 1.0).ceil() as usize).min(size.height);
        let x0 = ((blob.cx - blob.rx * 1.2 - 1.0).floor().max(0.0)) as usize;
        let x1 = ((blob.cx + blob.rx * 1.2 + 1.0).ceil() as usize).min(size.width);
        for y in y0..y1 {
            for x in x0..x1 {
                if blob.contains(y, x) {
                    mask.set(y, x, true);
                }
            }
        }
    }
    mask
}

/// Tight per-blob boxes (of each blob's own pixels).
fn blob_boxes(scene: &Scene, size: ImageSize) -> Vec<BoundingBox> {
    scene
        .blobs
        .iter()
        .filter_map(|blob| {
            let mut single = Scene {
                blobs: vec![*blob],
                bg_seedlets: scene.bg_seedlets,
                noise_seed: 0,
            };
            single.blobs[0].contrast = blob.contrast;
            render_mask(&single, size).tight_bbox()
        })
        .collect()
}

fn render_image(scene: &Scene, size: ImageSize) -> Vec<u8> {
    let [fy, fx, py, px, amp, base] = scene.bg_seedlets;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scene.noise_seed);
    let mut out = Vec::with_capacity(size.pixels());
    for y in 0..size.height {
        for x in 0..size.width {
            let yc = y as f64 + 0.5;
            let xc = x as f64 + 0.5;
            let mut v = base
                + amp * ((fy * yc + py).sin() + (fx * xc + px).sin())
                + noise_rng.gen_range(-7.0..7.0);
            for blob in &scene.blobs {
                let r = blob.radial(yc, xc);
                if r <= 1.0 {
                    v += blob.contrast * (0.6 + 0.4 * (1.0 - r));
                }
            }
            out.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Separable Gaussian blur on the 8-bit image.
fn gaussian_blur(data: &[u8], size: ImageSize, sigma: f64) -> Vec<u8> {
    let radius = (2.5 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut norm = 0.0;
    for d in -radius..=radius {
        let w = (-(d as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        norm += w;
    }
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let (h, w) = (size.height as isize, size.width as isize);
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let mut tmp = vec![0.0f64; size.pixels()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, d) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * data[y as usize * w as usize + clamp(x + d, w)] as f64;
            }
            tmp[y as usize * w as usize + x as usize] = acc;
        }
    }
    let mut out = vec![0u8; size.pixels()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, d) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * tmp[clamp(y + d, h) * w as usize + x as usize];
            }
            out[y as usize * w as usize + x as usize] = acc.clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Jitter each box edge by 10-40% of the corresponding side length.
fn jitter_box(b: BoundingBox, size: ImageSize, rng: &mut ChaCha8Rng) -> BoundingBox {
    let jit = |side: usize, rng: &mut ChaCha8Rng| -> isize {
        let mag = side as f64 * rng.gen_range(0.10..0.40);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        (sign * mag).round() as isize
    };
    let w = b.width();
    let h = b.height();
    let clamp_x = |v: isize| v.clamp(0, size.width as isize) as usize;
    let clamp_y = |v: isize| v.clamp(0, size.height as isize) as usize;
    let mut x0 = clamp_x(b.x0 as isize + jit(w, rng));
    let mut x1 = clamp_x(b.x1 as isize + jit(w, rng));
    let mut y0 = clamp_y(b.y0 as isize + jit(h, rng));
    let mut y1 = clamp_y(b.y1 as isize + jit(h, rng));
    if x0 >= x1 {
        x0 = x1.saturating_sub(2).min(x0);
        x1 = (x0 + 2).min(size.width);
        x0 = x1.saturating_sub(2);
    }
    if y0 >= y1 {
        y0 = y1.saturating_sub(2).min(y0);
        y1 = (y0 + 2).min(size.height);
        y0 = y1.saturating_sub(2);
    }
    BoundingBox::new(x0, y0, x1, y1)
}

fn spurious_box(size: ImageSize, rng: &mut ChaCha8Rng) -> BoundingBox {
    let bw = rng.gen_range(10..=(size.width / 2).max(11));
    let bh = rng.gen_range(10..=(size.height / 2).max(11));
    let x0 = rng.gen_range(0..=(size.width - bw));
    let y0 = rng.gen_range(0..=(size.height - bh));
    BoundingBox::new(x0, y0, x0 + bw, y0 + bh)
}

/// Assign noise modes so the counts match the requested fractions exactly
/// (largest-remainder rounding), then shuffle deterministically.
fn noise_assignment(n: usize, noise: &NoiseFractions, rng: &mut ChaCha8Rng) -> Vec<NoiseMode> {
    let targets = [
        (NoiseMode::Blur, noise.blur),
        (NoiseMode::NoPolyp, noise.no_polyp),
        (NoiseMode::WrongLabel, noise.wrong_label),
        (NoiseMode::ImpreciseBox, noise.imprecise_box),
    ];
    let mut counts: Vec<(NoiseMode, usize, f64)> = targets
        .iter()
        .map(|&(m, f)| {
            let exact = f * n as f64;
            (m, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = counts.iter().map(|c| c.1).sum();
    // distribute leftover units by largest remainder, ties broken by order
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].2.partial_cmp(&counts[a].2).unwrap());
    let want: usize = targets
        .iter()
        .map(|&(_, f)| (f * n as f64).round() as usize)
        .sum::<usize>()
        .min(n);
    let mut k = 0;
    while assigned < want && k < order.len() {
        if counts[order[k]].2 > 1e-9 {
            counts[order[k]].1 += 1;
            assigned += 1;
        }
        k += 1;
    }
    let mut modes = Vec::with_capacity(n);
    for &(m, c, _) in &counts {
        modes.extend(std::iter::repeat(m).take(c));
    }
    while modes.len() < n {
        modes.push(NoiseMode::Clean);
    }
    // Fisher-Yates with the corpus RNG
    for i in (1..modes.len()).rev() {
        let j = rng.gen_range(0..=i);
        modes.swap(i, j);
    }
    modes
}

fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

/// Generate a corpus under `dir`: images, hidden ground truth, annotations
/// and the manifest. Returns the manifest that was written.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<CorpusManifest> {
    spec.noise.validate()?;
    let size = spec.size();
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    std::fs::create_dir_all(dir.join("gt")).map_err(|e| Error::io(dir, e))?;
    std::fs::create_dir_all(dir.join("annotations")).map_err(|e| Error::io(dir, e))?;

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let modes = noise_assignment(spec.box_train, &spec.noise, &mut master);

    // sample every scene first so wrong-label records can borrow a
    // different frame's boxes
    let total = spec.mask_train + spec.box_train + spec.test;
    let mut scenes = Vec::with_capacity(total);
    for i in 0..total {
        let mut rng = record_rng(spec.seed, i as u64);
        let box_index = (i >= spec.mask_train && i < spec.mask_train + spec.box_train)
            .then(|| i - spec.mask_train);
        let with_blobs = match box_index {
            Some(bi) => modes[bi] != NoiseMode::NoPolyp,
            None => true,
        };
        scenes.push((sample_scene(&mut rng, size, with_blobs), rng));
    }

    let mut records = Vec::with_capacity(total);
    for i in 0..total {
        let (split, local, noise) = if i < spec.mask_train {
            (Split::TrainMask, i, NoiseMode::Clean)
        } else if i < spec.mask_train + spec.box_train {
            let bi = i - spec.mask_train;
            (Split::TrainBox, bi, modes[bi])
        } else {
            (Split::Test, i - spec.mask_train - spec.box_train, NoiseMode::Clean)
        };
        let id = match split {
            Split::TrainMask => format!("m{local:04}"),
            Split::TrainBox => format!("b{local:04}"),
            Split::Test => format!("t{local:04}"),
        };
        let scene = scenes[i].0.clone();
        let mut rng = scenes[i].1.clone();

        let gt_mask = render_mask(&scene, size);
        let mut image = render_image(&scene, size);
        if noise == NoiseMode::Blur {
            let sigma = rng.gen_range(1.2..2.2);
            image = gaussian_blur(&image, size, sigma);
        }

        let image_rel = PathBuf::from(format!("images/{id}.pgm"));
        let gt_rel = PathBuf::from(format!("gt/{id}.pgm"));
        pgm::write_gray8(&dir.join(&image_rel), size, &image)?;
        pgm::write_mask(&dir.join(&gt_rel), &gt_mask)?;

        let record = match split {
            Split::TrainMask => {
                let mask_rel = PathBuf::from(format!("annotations/{id}.pgm"));
                pgm::write_mask(&dir.join(&mask_rel), &gt_mask)?;
                ManifestRecord {
                    id,
                    image: image_rel,
                    kind: AnnotationKind::Mask,
                    split,
                    noise,
                    boxes: None,
                    mask: Some(mask_rel),
                    gt: gt_rel,
                }
            }
            Split::Test => ManifestRecord {
                id,
                image: image_rel,
                kind: AnnotationKind::Mask,
                split,
                noise,
                boxes: None,
                mask: Some(gt_rel.clone()),
                gt: gt_rel,
            },
            Split::TrainBox => {
                let own_boxes = blob_boxes(&scene, size);
                let boxes = match noise {
                    NoiseMode::Clean | NoiseMode::Blur => own_boxes,
                    NoiseMode::NoPolyp => vec![spurious_box(size, &mut rng)],
                    NoiseMode::WrongLabel => {
                        // steal boxes from the next box-split frame that has any
                        let n_box = spec.box_train;
                        let mut partner = (local + 1) % n_box;
                        let mut stolen = Vec::new();
                        for _ in 0..n_box {
                            if partner != local {
                                let scene_idx = spec.mask_train + partner;
                                stolen = blob_boxes(&scenes[scene_idx].0, size);
                                if !stolen.is_empty() {
                                    break;
                                }
                            }
                            partner = (partner + 1) % n_box;
                        }
                        if stolen.is_empty() {
                            stolen = vec![spurious_box(size, &mut rng)];
                        }
                        stolen
                    }
                    NoiseMode::ImpreciseBox => own_boxes
                        .into_iter()
                        .map(|b| jitter_box(b, size, &mut rng))
                        .collect(),
                };
                ManifestRecord {
                    id,
                    image: image_rel,
                    kind: AnnotationKind::Box,
                    split,
                    noise,
                    boxes: Some(boxes),
                    mask: None,
                    gt: gt_rel,
                }
            }
        };
        records.push(record);
    }

    let manifest = CorpusManifest {
        root: dir.to_path_buf(),
        records,
    };
    crate::data::save_manifest(&manifest, &dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pgm::read_mask;
    use crate::mask::rasterize_boxes;

    fn tiny_spec(seed: u64) -> CorpusSpec {
        CorpusSpec {
            height: 48,
            width: 48,
            mask_train: 3,
            box_train: 8,
            test: 2,
            noise: NoiseFractions::none(),
            seed,
        }
    }

    #[test]
    fn clean_boxes_are_tight_bboxes_of_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&tiny_spec(3), dir.path()).unwrap();
        for r in m.split(Split::TrainBox) {
            let gt = read_mask(&m.resolve(&r.gt)).unwrap();
            let boxes = r.boxes.as_ref().unwrap();
            // the union of tight per-blob boxes must cover the mask,
            // and the overall tight bbox must match the union's bbox
            let box_mask = rasterize_boxes(boxes, gt.size()).unwrap();
            let covered = crate::mask::intersect(&gt, &box_mask).unwrap();
            assert_eq!(covered, gt, "box union must cover the mask ({})", r.id);
            let overall = gt.tight_bbox().unwrap();
            let union_bbox = box_mask.tight_bbox().unwrap();
            assert_eq!(overall, union_bbox, "boxes must be tight ({})", r.id);
        }
    }

    #[test]
    fn fixed_seed_corpora_are_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_corpus(&tiny_spec(11), d1.path()).unwrap();
        generate_corpus(&tiny_spec(11), d2.path()).unwrap();
        let m1 = std::fs::read(d1.path().join("manifest.jsonl")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m1, m2);
        for entry in std::fs::read_dir(d1.path().join("images")).unwrap() {
            let p1 = entry.unwrap().path();
            let p2 = d2.path().join("images").join(p1.file_name().unwrap());
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn noise_counts_match_fractions_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            box_train: 200,
            noise: NoiseFractions {
                blur: 0.0,
                no_polyp: 0.0,
                wrong_label: 0.5,
                imprecise_box: 0.0,
            },
            mask_train: 0,
            test: 0,
            ..tiny_spec(5)
        };
        let m = generate_corpus(&spec, dir.path()).unwrap();
        let wrong = m
            .records
            .iter()
            .filter(|r| r.noise == NoiseMode::WrongLabel)
            .count();
        assert_eq!(wrong, 100);
    }

    #[test]
    fn mixed_fractions_are_bookkept() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            box_train: 40,
            noise: NoiseFractions {
                blur: 0.1,
                no_polyp: 0.1,
                wrong_label: 0.25,
                imprecise_box: 0.25,
            },
            mask_train: 0,
            test: 0,
            ..tiny_spec(5)
        };
        let m = generate_corpus(&spec, dir.path()).unwrap();
        let count = |mode| m.records.iter().filter(|r| r.noise == mode).count();
        assert_eq!(count(NoiseMode::Blur), 4);
        assert_eq!(count(NoiseMode::NoPolyp), 4);
        assert_eq!(count(NoiseMode::WrongLabel), 10);
        assert_eq!(count(NoiseMode::ImpreciseBox), 10);
        assert_eq!(count(NoiseMode::Clean), 12);
    }

    #[test]
    fn no_polyp_records_have_empty_gt_but_a_box() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            box_train: 10,
            noise: NoiseFractions {
                blur: 0.0,
                no_polyp: 1.0,
                wrong_label: 0.0,
                imprecise_box: 0.0,
            },
            mask_train: 0,
            test: 0,
            ..tiny_spec(9)
        };
        let m = generate_corpus(&spec, dir.path()).unwrap();
        for r in &m.records {
            let gt = read_mask(&m.resolve(&r.gt)).unwrap();
            assert!(gt.is_empty(), "{} should have no object", r.id);
            assert!(!r.boxes.as_ref().unwrap().is_empty());
        }
    }

    #[test]
    fn train_box_annotations_never_reference_gt_dir() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            noise: NoiseFractions::default(),
            ..tiny_spec(13)
        };
        let m = generate_corpus(&spec, dir.path()).unwrap();
        for r in m.split(Split::TrainBox) {
            assert!(r.mask.is_none());
            assert!(r.boxes.is_some());
        }
    }

    #[test]
    fn rejects_overfull_fractions() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            noise: NoiseFractions {
                blur: 0.5,
                no_polyp: 0.4,
                wrong_label: 0.3,
                imprecise_box: 0.0,
            },
            ..tiny_spec(1)
        };
        assert!(generate_corpus(&spec, dir.path()).is_err());
    }

    #[test]
    fn clean_box_dice_is_high_but_below_one() {
        // boxes over-cover a non-rectangular blob, so dice(box, gt) < 1
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&tiny_spec(21), dir.path()).unwrap();
        for r in m.split(Split::TrainBox) {
            let gt = read_mask(&m.resolve(&r.gt)).unwrap();
            let bm = rasterize_boxes(r.boxes.as_ref().unwrap(), gt.size()).unwrap();
            let d = crate::mask::dice(&bm, &gt).unwrap();
            assert!(d < 1.0, "{}: dice {d}", r.id);
            assert!(d > 0.7, "{}: dice {d} unexpectedly low for clean data", r.id);
        }
    }
}
