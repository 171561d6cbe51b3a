//! Binary PGM (P5) reading and writing.
//!
//! Wire conventions used throughout the pipeline:
//! - binary masks: 8-bit, background 0, foreground 255
//! - tri-label masks: 8-bit, background 0, uncertain 128, foreground 255
//! - images: 8-bit grayscale
//! - probability maps: 16-bit fixed point (big-endian samples, maxval 65535)
//!
//! The writer always emits the canonical header `P5\n<w> <h>\n<maxval>\n`,
//! which makes write -> read -> write byte-identical. The reader additionally
//! tolerates `#` comments in the header and reports malformed input with the
//! byte offset of the problem.

use std::path::Path;

use crate::error::Error;
use crate::mask::{BinaryMask, ImageSize, ProbMap, TriLabel, TriLabelMask};
use crate::Result;

const TRI_BG: u8 = 0;
const TRI_UNCERTAIN: u8 = 128;
const TRI_FG: u8 = 255;

/// Raw decoded PGM: samples widened to u16 regardless of depth.
#[derive(Debug, Clone)]
pub struct PgmImage {
    pub size: ImageSize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl PgmImage {
    pub fn is_sixteen_bit(&self) -> bool {
        self.maxval > 255
    }
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Skip whitespace and `#` comments, then read one ASCII token.
    fn token(&mut self, path: &Path) -> Result<(usize, &'a [u8])> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(path, start, "unexpected end of header"));
        }
        Ok((start, &self.bytes[start..self.pos]))
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<(usize, u64)> {
        let (off, tok) = self.token(path)?;
        let s = std::str::from_utf8(tok)
            .map_err(|_| parse_err(path, off, format!("non-ASCII {what}")))?;
        s.parse::<u64>()
            .map(|v| (off, v))
            .map_err(|_| parse_err(path, off, format!("invalid {what} '{s}'")))
    }
}

/// Decode a binary PGM from memory. `path` is used only for error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<PgmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(path, 0, "missing P5 magic"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let (w_off, width) = cur.number(path, "width")?;
    let (h_off, height) = cur.number(path, "height")?;
    let (m_off, maxval) = cur.number(path, "maxval")?;
    if width == 0 || width > 1 << 20 {
        return Err(parse_err(path, w_off, format!("width {width} out of range")));
    }
    if height == 0 || height > 1 << 20 {
        return Err(parse_err(path, h_off, format!("height {height} out of range")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, m_off, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(parse_err(path, cur.pos, "missing whitespace before raster"));
    }
    cur.pos += 1;
    let size = ImageSize::new(height as usize, width as usize);
    let n = size.pixels();
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let need = n * bytes_per_sample;
    let avail = bytes.len() - cur.pos;
    if avail < need {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("raster truncated: need {need} bytes, have {avail}"),
        ));
    }
    if avail > need {
        return Err(parse_err(
            path,
            cur.pos + need,
            format!("{} trailing bytes after raster", avail - need),
        ));
    }
    let raster = &bytes[cur.pos..];
    let samples = if bytes_per_sample == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(PgmImage {
        size,
        maxval: maxval as u16,
        samples,
    })
}

/// Encode an 8-bit grayscale image.
pub fn encode_gray8(size: ImageSize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), size.pixels());
    let mut out = format!("P5\n{} {}\n255\n", size.width, size.height).into_bytes();
    out.extend_from_slice(data);
    out
}

/// Encode a 16-bit grayscale image (big-endian samples, maxval 65535).
pub fn encode_gray16(size: ImageSize, data: &[u16]) -> Vec<u8> {
    assert_eq!(data.len(), size.pixels());
    let mut out = format!("P5\n{} {}\n65535\n", size.width, size.height).into_bytes();
    for &v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_gray8(path: &Path, size: ImageSize, data: &[u8]) -> Result<()> {
    super::write_bytes(path, &encode_gray8(size, data))
}

pub fn read_gray8(path: &Path) -> Result<(ImageSize, Vec<u8>)> {
    let img = decode(&super::read_bytes(path)?, path)?;
    if img.is_sixteen_bit() {
        return Err(parse_err(
            path,
            0,
            "unsupported depth: 16-bit PGM where 8-bit expected",
        ));
    }
    Ok((img.size, img.samples.iter().map(|&v| v as u8).collect()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray8(path, mask.size(), &data)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (size, data) = read_gray8(path)?;
    let mut bits = Vec::with_capacity(data.len());
    for (i, &v) in data.iter().enumerate() {
        match v {
            0 => bits.push(false),
            255 => bits.push(true),
            other => {
                return Err(parse_err(
                    path,
                    0,
                    format!("mask sample {i} has value {other}, expected 0 or 255"),
                ))
            }
        }
    }
    Ok(BinaryMask::from_bits(size, bits))
}

pub fn write_trilabel(path: &Path, mask: &TriLabelMask) -> Result<()> {
    let data: Vec<u8> = mask
        .labels()
        .iter()
        .map(|&l| match l {
            TriLabel::Background => TRI_BG,
            TriLabel::Uncertain => TRI_UNCERTAIN,
            TriLabel::Foreground => TRI_FG,
        })
        .collect();
    write_gray8(path, mask.size(), &data)
}

pub fn read_trilabel(path: &Path) -> Result<TriLabelMask> {
    let (size, data) = read_gray8(path)?;
    let mut labels = Vec::with_capacity(data.len());
    for (i, &v) in data.iter().enumerate() {
        labels.push(match v {
            TRI_BG => TriLabel::Background,
            TRI_UNCERTAIN => TriLabel::Uncertain,
            TRI_FG => TriLabel::Foreground,
            other => {
                return Err(parse_err(
                    path,
                    0,
                    format!("tri-label sample {i} has value {other}, expected 0/128/255"),
                ))
            }
        });
    }
    Ok(TriLabelMask::new(size, labels))
}

/// Store a probability map as 16-bit fixed point: sample = round(p * 65535).
pub fn write_probmap(path: &Path, p: &ProbMap) -> Result<()> {
    let data: Vec<u16> = p
        .values()
        .iter()
        .map(|&v| (v * 65535.0).round() as u16)
        .collect();
    super::write_bytes(path, &encode_gray16(p.size(), &data))
}

pub fn read_probmap(path: &Path) -> Result<ProbMap> {
    let img = decode(&super::read_bytes(path)?, path)?;
    if !img.is_sixteen_bit() {
        return Err(parse_err(
            path,
            0,
            "unsupported depth: probability maps are stored as 16-bit PGM",
        ));
    }
    let values = img.samples.iter().map(|&v| v as f64 / 65535.0).collect();
    ProbMap::new(img.size, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{rasterize_boxes, BoundingBox};

    fn sz(h: usize, w: usize) -> ImageSize {
        ImageSize::new(h, w)
    }

    #[test]
    fn mask_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = rasterize_boxes(&[BoundingBox::new(1, 0, 3, 2)], sz(4, 5)).unwrap();
        write_mask(&path, &mask).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back, mask);
        write_mask(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn trilabel_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let b = rasterize_boxes(&[BoundingBox::new(0, 0, 2, 3)], sz(3, 3)).unwrap();
        let p = rasterize_boxes(&[BoundingBox::new(1, 1, 3, 3)], sz(3, 3)).unwrap();
        let t = crate::ffs::pixel_fusion(&b, &p).unwrap();
        write_trilabel(&path, &t).unwrap();
        assert_eq!(read_trilabel(&path).unwrap(), t);
    }

    #[test]
    fn probmap_quantizes_to_16_bit_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let p = ProbMap::new(sz(2, 2), vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        write_probmap(&path, &p).unwrap();
        let back = read_probmap(&path).unwrap();
        for (a, b) in p.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
        // a second write of the loaded map is byte-identical (idempotent quantization)
        let first = std::fs::read(&path).unwrap();
        write_probmap(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn read_mask_rejects_16_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.pgm");
        std::fs::write(&path, encode_gray16(sz(2, 2), &[0, 1, 2, 3])).unwrap();
        let err = read_mask(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported depth"), "{err}");
    }

    #[test]
    fn decode_reports_byte_offsets() {
        let path = Path::new("<memory>");
        let err = decode(b"P5\n4 bad\n255\n", path).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
        let err = decode(b"P5\n2 2\n255\nabc", path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn decode_accepts_header_comments() {
        let mut bytes = b"P5\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = decode(&bytes, Path::new("<memory>")).unwrap();
        assert_eq!(img.size, sz(1, 2));
        assert_eq!(img.samples, vec![7, 9]);
    }

    #[test]
    fn read_mask_rejects_non_binary_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.pgm");
        write_gray8(&path, sz(1, 2), &[0, 200]).unwrap();
        assert!(read_mask(&path).is_err());
    }
}
