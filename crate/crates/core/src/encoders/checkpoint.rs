//! Single-file parameter archive.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "CMGRCKPT" version
//! manifest_len manifest (UTF-8 text)
//! entry_count
//! per entry: name_len name rank dims[rank] values (f32 LE, row-major)
//! ```
//!
//! The manifest always ends with a `payload.sha256 = <hex>` line covering
//! the entry section, which is verified on load.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::params::{hex_digest, ParamStore};

const MAGIC: &[u8; 8] = b"CMGRCKPT";
const VERSION: u32 = 1;
const DIGEST_KEY: &str = "payload.sha256";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: String,
    pub tensors: Vec<(String, Mat)>,
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_payload(store: &ParamStore) -> Vec<u8> {
    let entries: Vec<_> = store.entries().collect();
    let mut out = Vec::new();
    put(&mut out, entries.len() as u32);
    for (name, m) in entries {
        put(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put(&mut out, 2);
        put(&mut out, m.nrows() as u32);
        put(&mut out, m.ncols() as u32);
        for v in m.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn encode_checkpoint(manifest: &str, store: &ParamStore) -> Vec<u8> {
    let payload = encode_payload(store);
    let mut h = Sha256::new();
    h.update(&payload);
    let mut text = manifest.to_string();
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&format!("{DIGEST_KEY} = {}\n", hex_digest(h)));
    let mut out = MAGIC.to_vec();
    put(&mut out, VERSION);
    put(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, manifest: &str, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(manifest, store)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::invalid("checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::invalid("checkpoint text is not UTF-8"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::invalid("not a checkpoint archive"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
    }
    let manifest = r.text()?;
    let payload = &bytes[r.pos..];
    let mut h = Sha256::new();
    h.update(payload);
    let digest = hex_digest(h);
    let recorded = manifest
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == DIGEST_KEY)
        .map(|(_, v)| v.trim());
    if recorded != Some(digest.as_str()) {
        return Err(Error::invalid("checkpoint payload checksum mismatch"));
    }
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.text()?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let shape = match dims.as_slice() {
            [a, b] => (*a, *b),
            [a] => (1, *a),
            _ => return Err(Error::invalid(format!("tensor '{name}' has unsupported rank {rank}"))),
        };
        let data = r.take(shape.0 * shape.1 * 4)?;
        let values = data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        tensors.push((name, Mat::from_shape_vec(shape, values).expect("length checked")));
    }
    Ok(Checkpoint { manifest, tensors })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

impl Checkpoint {
    /// Copies every archived tensor into the same-named parameter of `store`.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        for (name, m) in &self.tensors {
            let id = store.find(name).ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))?;
            store.set(id, m.clone())?;
        }
        Ok(())
    }
}
