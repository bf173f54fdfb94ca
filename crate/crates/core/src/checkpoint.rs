//! Checkpoint container: one binary file holding a JSON descriptor and the
//! named parameter tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"OSAA1"
//! version u8 = 1
//! u32     descriptor length, then that many JSON bytes (CheckpointMeta)
//! u32     record count
//! record: u32 name length, name bytes,
//!         u8 dtype (0 = f32, 1 = f64),
//!         u32 rank, rank x u64 extents,
//!         extent-product values
//! ```
//!
//! Tensors are stored in the precision they trained in, so reloading for
//! evaluation reproduces training-time predictions bit for bit. The
//! descriptor carries the architecture, the evaluation-side normalization
//! statistics at full f64, and enough provenance to tie metrics back to
//! the producing run.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::{NetConfig, Networks, Param};
use crate::scalar::{Precision, Scalar};

const MAGIC: &[u8; 5] = b"OSAA1";

/// Descriptor stored inside every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub precision: Precision,
    pub net: NetConfig,
    /// Normalization applied to evaluation inputs: the target train-split
    /// statistics from training time.
    pub norm: NormStats,
    pub has_decoder: bool,
    pub has_discriminator: bool,
}

pub fn save<T: Scalar>(path: &Path, nets: &Networks<T>, meta: &CheckpointMeta) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(1u8);
    let desc = serde_json::to_vec(meta)?;
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(nets.params.len() as u32).to_le_bytes());
    let dtype = match T::PRECISION {
        Precision::F32 => 0u8,
        Precision::F64 => 1u8,
    };
    for p in &nets.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(dtype);
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &e in &p.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in &p.values {
            let v: f64 = v.to_f64();
            match dtype {
                0 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint(format!(
                "{}: truncated while reading {what}",
                self.path.display()
            )));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b8 = [0u8; 8];
        b8.copy_from_slice(self.take(8, what)?);
        Ok(u64::from_le_bytes(b8))
    }
}

fn read_meta<'a>(r: &mut Reader<'a>) -> Result<CheckpointMeta> {
    if r.take(5, "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            r.path.display()
        )));
    }
    let version = r.take(1, "version")?[0];
    if version != 1 {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version}",
            r.path.display()
        )));
    }
    let desc_len = r.u32("descriptor length")? as usize;
    let desc = r.take(desc_len, "descriptor")?;
    serde_json::from_slice(desc)
        .map_err(|e| Error::Checkpoint(format!("{}: bad descriptor: {e}", r.path.display())))
}

/// Reads just the descriptor, so a caller can dispatch on the stored
/// precision before committing to a typed full load.
pub fn peek_meta(path: &Path) -> Result<CheckpointMeta> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, path };
    read_meta(&mut r)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(Networks<T>, CheckpointMeta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, path };
    let meta = read_meta(&mut r)?;

    let count = r.u32("record count")? as usize;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let ctx = format!("record {i}");
        let name_len = r.u32(&ctx)? as usize;
        let name = String::from_utf8(r.take(name_len, &ctx)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: record {i} name is not UTF-8", path.display())))?;
        let dtype = r.take(1, &ctx)?[0];
        let rank = r.u32(&ctx)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&ctx)? as usize);
        }
        let len: usize = shape.iter().product();
        let values: Vec<T> = match dtype {
            0 => r
                .take(len * 4, &name)?
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect(),
            1 => r
                .take(len * 8, &name)?
                .chunks_exact(8)
                .map(|b| {
                    let mut b8 = [0u8; 8];
                    b8.copy_from_slice(b);
                    T::from_f64(f64::from_le_bytes(b8))
                })
                .collect(),
            other => {
                return Err(Error::Checkpoint(format!(
                    "{}: record {name} has unknown dtype {other}",
                    path.display()
                )))
            }
        };
        params.push(Param { name, shape, values });
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after last record",
            path.display(),
            r.buf.len()
        )));
    }
    let nets = Networks {
        cfg: meta.net.clone(),
        params,
        has_decoder: meta.has_decoder,
        has_discriminator: meta.has_discriminator,
    };
    Ok((nets, meta))
}
