//! Binary operator cache.
//!
//! Layout: a magic line, a JSON header line, then little-endian `f64`
//! payload. The header carries the grid hash, the key of the assembly
//! settings, the payload length and its SHA-256 digest.

use super::{AssemblySpec, CollisionOperator, QuadratureSpec};
use crate::velocity::VelocityGrid;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &str = "KNUDSEN-CACHE v1";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("cache {path}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    key: String,
    len: usize,
    sha256: String,
}

/// Directory holding cache files, one per key.
#[derive(Clone, Debug)]
pub struct OperatorCache {
    pub dir: PathBuf,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn short(key: &str) -> String {
    digest(key.as_bytes())[..24].to_string()
}

impl OperatorCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OperatorCache { dir: dir.into() }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.bin", short(key)))
    }

    pub fn write(&self, key: &str, data: &[f64]) -> Result<(), CacheError> {
        fs::create_dir_all(&self.dir)?;
        let mut bytes = Vec::with_capacity(data.len() * 8);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let header = Header {
            key: key.to_string(),
            len: data.len(),
            sha256: digest(&bytes),
        };
        let path = self.path_for(key);
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            writeln!(f, "{MAGIC}")?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(&header).expect("header serializes")
            )?;
            f.write_all(&bytes)?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// `Ok(None)` when absent or keyed differently; errors on corruption.
    pub fn read(&self, key: &str) -> Result<Option<Vec<f64>>, CacheError> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        read_file(&path, Some(key))
    }
}

/// Reads and verifies a cache file; `expect_key` filters on the stored key.
pub fn read_file(path: &Path, expect_key: Option<&str>) -> Result<Option<Vec<f64>>, CacheError> {
    let shown = path.display().to_string();
    let bad = |reason: &str| CacheError::Format {
        path: shown.clone(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad("bad magic line"));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| bad(&format!("bad header: {e}")))?;
    if let Some(k) = expect_key {
        if header.key != k {
            return Ok(None);
        }
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let found = digest(&bytes);
    if found != header.sha256 {
        return Err(CacheError::Checksum {
            path: shown,
            expected: header.sha256,
            found,
        });
    }
    if bytes.len() != header.len * 8 {
        return Err(bad("payload length does not match header"));
    }
    Ok(Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    ))
}

pub(super) fn operator_key(grid: &VelocityGrid, spec: &AssemblySpec) -> String {
    format!("operator:{}:phi{}", grid.spec.hash(), spec.n_phi)
}

pub(super) fn tensor_key(grid: &VelocityGrid, spec: &QuadratureSpec) -> String {
    format!("tensor:{}:{}", grid.spec.hash(), spec.key())
}

pub(super) fn store_operator(
    cache: &OperatorCache,
    key: &str,
    op: &CollisionOperator,
) -> Result<(), CacheError> {
    let mut data = op.nu_plane.clone();
    for s in &op.sectors {
        data.extend_from_slice(s.raw_kernel.as_slice());
        data.extend_from_slice(s.absorption.as_slice());
    }
    cache.write(key, &data)
}

pub(super) fn load_operator(
    cache: &OperatorCache,
    key: &str,
    grid: &VelocityGrid,
) -> Result<Option<CollisionOperator>, CacheError> {
    let Some(data) = cache.read(key)? else {
        return Ok(None);
    };
    let n = grid.plane.len();
    let n_sectors = grid.n_angle() / 2 + 1;
    if data.len() != n + 2 * n_sectors * n * n {
        return Err(CacheError::Format {
            path: cache.path_for(key).display().to_string(),
            reason: "payload size does not fit the grid".into(),
        });
    }
    let nu = data[..n].to_vec();
    let mut raw = Vec::with_capacity(n_sectors);
    let mut off = n;
    for _ in 0..n_sectors {
        let k = DMatrix::from_column_slice(n, n, &data[off..off + n * n]);
        off += n * n;
        let k3 = DMatrix::from_column_slice(n, n, &data[off..off + n * n]);
        off += n * n;
        raw.push((k, k3));
    }
    Ok(Some(CollisionOperator::from_raw(grid, nu, raw)))
}

pub(super) fn store_tensor(cache: &OperatorCache, key: &str, t: &[f64]) -> Result<(), CacheError> {
    cache.write(key, t)
}

pub(super) fn load_tensor(
    cache: &OperatorCache,
    key: &str,
    n: usize,
) -> Result<Option<Vec<f64>>, CacheError> {
    match cache.read(key)? {
        Some(t) if t.len() == n * n * n => Ok(Some(t)),
        Some(_) => Err(CacheError::Format {
            path: cache.path_for(key).display().to_string(),
            reason: "tensor size does not fit the grid".into(),
        }),
        None => Ok(None),
    }
}
