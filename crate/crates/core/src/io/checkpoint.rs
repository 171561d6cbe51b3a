//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "BBCKPT01"            8 bytes
//! config length                u32, then that many bytes of config JSON
//! step counter                 u64
//! tensor count                 u32
//! per tensor:
//!   name length                u32, then the UTF-8 name
//!   element count              u32, then elements as f32
//! ```
//!
//! Parameters are stored as 32-bit floats. Loading widens back to f64, so a
//! write -> read -> write cycle is byte-identical.

use std::path::Path;

use crate::error::Error;
use crate::net::{NetworkConfig, NetworkState};
use crate::Result;

const MAGIC: &[u8; 8] = b"BBCKPT01";

pub fn save(state: &NetworkState, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let config_json = serde_json::to_vec(state.config())
        .map_err(|e| Error::Config(format!("cannot serialize network config: {e}")))?;
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&state.step().to_le_bytes());
    let params = state.params();
    let names = state.param_names();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in names.iter().zip(&params) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.len() as u32).to_le_bytes());
        for &v in tensor.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    super::write_bytes(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: self.pos,
                message: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<NetworkState> {
    let bytes = super::read_bytes(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: "not a checkpoint file (bad magic)".into(),
        });
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_off = r.pos;
    let cfg_bytes = r.take(cfg_len, "config JSON")?;
    let config: NetworkConfig = serde_json::from_slice(cfg_bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: cfg_off,
        message: format!("invalid config JSON: {e}"),
    })?;
    let step = r.u64("step counter")?;
    let tensor_count = r.u32("tensor count")? as usize;

    let mut state = NetworkState::new(config)?;
    state.set_step(step);
    let expected_names = state.param_names();
    if tensor_count != expected_names.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: r.pos,
            message: format!(
                "checkpoint holds {tensor_count} tensors, config implies {}",
                expected_names.len()
            ),
        });
    }
    let mut loaded: Vec<Vec<f64>> = Vec::with_capacity(tensor_count);
    for expected in &expected_names {
        let name_len = r.u32("tensor name length")? as usize;
        let name_off = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                offset: name_off,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        if &name != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: name_off,
                message: format!("tensor name '{name}' does not match expected '{expected}'"),
            });
        }
        let count = r.u32("element count")? as usize;
        let data = r.take(count * 4, "tensor data")?;
        loaded.push(
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: r.pos,
            message: format!("{} trailing bytes after checkpoint", bytes.len() - r.pos),
        });
    }
    let mut params = state.params_mut();
    for (param, values) in params.iter_mut().zip(&loaded) {
        if param.len() != values.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: 0,
                message: "tensor size does not match config".into(),
            });
        }
        param.copy_from_slice(values);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut state = NetworkState::new(NetworkConfig::arch_a(5)).unwrap();
        state.set_step(17);
        save(&state, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.step(), 17);
        assert_eq!(loaded.config(), state.config());
        save(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn loaded_params_match_saved_to_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let state = NetworkState::new(NetworkConfig::arch_b(9)).unwrap();
        save(&state, &path).unwrap();
        let loaded = load(&path).unwrap();
        for (a, b) in state.params().iter().zip(loaded.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-7 + 1e-10);
            }
        }
    }

    #[test]
    fn rejects_corrupt_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let state = NetworkState::new(NetworkConfig::arch_b(9)).unwrap();
        save(&state, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());

        let good = {
            save(&state, &path).unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(load(&path).is_err());
    }
}
