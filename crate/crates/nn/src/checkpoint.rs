//! Checkpoint container: a JSON spec header plus named weight blobs,
//! finished with a SHA-256 checksum over everything before it.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PFNN" | version u32 | spec_len u64 | spec JSON bytes
//! | blob_count u64 | blobs... | sha256 (32 bytes)
//! blob := name_len u64 | name utf8 | rows u64 | cols u64 | f64 data
//! ```
//!
//! Writes go to a sibling temp file first and are renamed into place, so
//! a crash never leaves a half-written checkpoint at the target path.

use crate::tensor::Tensor2;
use crate::{NnError, Real};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PFNN";
const VERSION: u32 = 1;

/// In-memory checkpoint: an opaque JSON spec string (the caller decides
/// its schema) and ordered named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec_json: String,
    pub blobs: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn new(spec_json: impl Into<String>) -> Self {
        Checkpoint { spec_json: spec_json.into(), blobs: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor2) {
        self.blobs.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Looks a blob up or reports which name is missing.
    pub fn require(&self, name: &str) -> Result<&Tensor2, NnError> {
        self.get(name)
            .ok_or_else(|| NnError::Corrupt(format!("checkpoint is missing blob {name:?}")))
    }
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    push_u64(&mut buf, ck.spec_json.len() as u64);
    buf.extend_from_slice(ck.spec_json.as_bytes());
    push_u64(&mut buf, ck.blobs.len() as u64);
    for (name, tensor) in &ck.blobs {
        push_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        push_u64(&mut buf, tensor.rows as u64);
        push_u64(&mut buf, tensor.cols as u64);
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

/// Serializes and atomically replaces `path`.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), NnError> {
    let bytes = encode(ck);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Corrupt(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let len = self.u64()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| NnError::Corrupt("non-utf8 string in checkpoint".into()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(NnError::Corrupt("file too short to be a checkpoint".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(NnError::Corrupt("checksum mismatch".into()));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::Version(version));
    }
    let spec_json = r.string()?;
    let count = r.u64()? as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| NnError::Corrupt("blob shape overflow".into()))?;
        let raw = r.take(n * 8)?;
        let data: Vec<Real> = raw
            .chunks_exact(8)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blobs.push((name, Tensor2::from_vec(rows, cols, data)));
    }
    if r.pos != body.len() {
        return Err(NnError::Corrupt("trailing bytes after last blob".into()));
    }
    Ok(Checkpoint { spec_json, blobs })
}
