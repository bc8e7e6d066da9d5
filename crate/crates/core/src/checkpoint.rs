//! Versioned binary model files.
//!
//! Layout: `b"OVDT"`, a 4-byte kind tag, `u32` version, `u64` metadata
//! length, metadata JSON, `u32` tensor count, then per tensor a
//! length-prefixed name, four `u32` dims and little-endian `f32` data.
//! A trailing sha256 over everything before it detects corruption.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"OVDT";
pub const VERSION: u32 = 1;

/// What a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Enhancer,
    Detector,
}

impl Kind {
    fn tag(self) -> &'static [u8; 4] {
        match self {
            Kind::Enhancer => b"ENHN",
            Kind::Detector => b"DETR",
        }
    }

    fn from_tag(tag: &[u8]) -> Option<Self> {
        match tag {
            b"ENHN" => Some(Kind::Enhancer),
            b"DETR" => Some(Kind::Detector),
            _ => None,
        }
    }
}

pub fn encode<M: Serialize>(kind: Kind, meta: &M, params: &ParamStore) -> Vec<u8> {
    let meta = serde_json::to_vec(meta).expect("metadata serialises");
    let mut buf = Vec::with_capacity(64 + meta.len() + params.num_scalars() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(kind.tag());
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let s = t.shape();
        for d in [s.c, s.n, s.h, s.w] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Header fields and raw metadata, without decoding tensors.
pub struct Decoded {
    pub kind: Kind,
    pub version: u32,
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let fail = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_owned(),
    };
    if bytes.len() < 32 + 4 {
        return Err(fail("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(fail("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(fail("not a model checkpoint"));
    }
    let kind = r.take(4).and_then(Kind::from_tag).ok_or_else(|| fail("unknown model kind"))?;
    let version = r.u32().ok_or_else(|| fail("truncated header"))?;
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let meta_len = r.u64().ok_or_else(|| fail("truncated header"))? as usize;
    let meta_bytes = r.take(meta_len).ok_or_else(|| fail("truncated metadata"))?;
    let meta: serde_json::Value = serde_json::from_slice(meta_bytes).map_err(|_| fail("metadata is not JSON"))?;
    let count = r.u32().ok_or_else(|| fail("truncated tensor table"))?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32().ok_or_else(|| fail("truncated tensor"))? as usize;
        let name = r.take(name_len).ok_or_else(|| fail("truncated tensor"))?;
        let name = std::str::from_utf8(name).map_err(|_| fail("tensor name is not UTF-8"))?.to_owned();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| fail("truncated tensor"))? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let raw = r.take(shape.numel() * 4).ok_or_else(|| fail("truncated tensor data"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(name, Tensor::from_vec(shape, data));
    }
    if r.pos != body.len() {
        return Err(fail("trailing bytes"));
    }
    Ok(Decoded {
        kind,
        version,
        meta,
        params,
    })
}

pub fn save<M: Serialize>(path: &Path, kind: Kind, meta: &M, params: &ParamStore) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(kind, meta, params)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Decoded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Decodes a checkpoint of the expected kind and typed metadata.
pub fn load<M: DeserializeOwned>(path: &Path, kind: Kind) -> Result<(M, ParamStore)> {
    let d = read(path)?;
    if d.kind != kind {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected a {kind:?} checkpoint, found {:?}", d.kind),
        });
    }
    let meta = serde_json::from_value(d.meta).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("metadata: {e}"),
    })?;
    Ok((meta, d.params))
}

/// Copies tensors from `src` into `dst` by name, checking shapes.
pub(crate) fn restore_params(dst: &mut ParamStore, src: &ParamStore, path: &Path) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected {} tensors, found {}", dst.len(), src.len()),
        });
    }
    for (i, name) in dst.names().to_vec().into_iter().enumerate() {
        let id = src.find(&name).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("missing tensor `{name}`"),
        })?;
        let t = src.get(id);
        let slot = &mut dst.tensors_mut()[i];
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape()),
            });
        }
        *slot = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.push("a.w", Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, -2.0, 3.5, 0.25]));
        s.push("a.b", Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![0.0, 7.0]));
        s
    }

    #[test]
    fn round_trip() {
        let meta = serde_json::json!({"epochs": 3, "tag": "x"});
        let bytes = encode(Kind::Detector, &meta, &store());
        let d = decode(&bytes, Path::new("m")).unwrap();
        assert_eq!(d.kind, Kind::Detector);
        assert_eq!(d.meta, meta);
        assert_eq!(d.params, store());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(Kind::Enhancer, &serde_json::json!({}), &store());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode(&bytes, Path::new("m")), Err(Error::Checkpoint { .. })));
        assert!(decode(&bytes[..10], Path::new("m")).is_err());
    }
}
