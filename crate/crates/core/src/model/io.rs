//! Model file format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CSNT"
//! 4       4     format version, u32 LE (currently 1)
//! 8       8     payload length P, u64 LE
//! 16      P     payload
//! 16+P    32    SHA-256 of the payload
//! ```
//!
//! Payload, all integers little-endian:
//!
//! ```text
//! u32 L, L bytes         config as UTF-8 JSON
//! u32 N                  tensor count, then N times in declaration order:
//!   u16 K, K bytes       tensor name
//!   u8 R, R × u32        shape
//!   prod(shape) × f32    values
//! u32 D, u32 V           embedding dim and vocabulary size, then V times:
//!   u32 K, K bytes       token
//! V × D × f32            embedding rows in vocabulary order
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Cosinet, CosinetConfig};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

pub const MAGIC: &[u8; 4] = b"CSNT";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFile(msg.into())
}

pub fn encode(model: &Cosinet<f32>, table: &EmbeddingTable) -> Result<Vec<u8>> {
    let mut p = Vec::new();
    let config = serde_json::to_vec(&model.config).map_err(|e| bad(e.to_string()))?;
    p.extend((config.len() as u32).to_le_bytes());
    p.extend(&config);
    let named = model.params.named();
    p.extend((named.len() as u32).to_le_bytes());
    for (name, t) in named {
        p.extend((name.len() as u16).to_le_bytes());
        p.extend(name.as_bytes());
        p.push(t.shape().len() as u8);
        for &d in t.shape() {
            p.extend((d as u32).to_le_bytes());
        }
        for v in t.data() {
            p.extend(v.to_le_bytes());
        }
    }
    p.extend((table.dim() as u32).to_le_bytes());
    p.extend((table.len() as u32).to_le_bytes());
    for tok in table.tokens() {
        p.extend((tok.len() as u32).to_le_bytes());
        p.extend(tok.as_bytes());
    }
    for tok in table.tokens() {
        for v in table.lookup(tok) {
            p.extend(v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(p.len() + 48);
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((p.len() as u64).to_le_bytes());
    out.extend(&p);
    out.extend(Sha256::digest(&p));
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid UTF-8 string"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Cosinet<f32>, EmbeddingTable)> {
    if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + len + 32 {
        return Err(bad("length field does not match file size"));
    }
    let payload = &bytes[16..16 + len];
    if Sha256::digest(payload).as_slice() != &bytes[16 + len..] {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { buf: payload, pos: 0 };
    let n = r.u32()?;
    let config: CosinetConfig = serde_json::from_slice(r.take(n)?).map_err(|e| bad(format!("config: {e}")))?;
    let mut model = Cosinet::<f32>::new(config)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32()?;
    if count != expected.len() {
        return Err(bad(format!("expected {} tensors, found {count}", expected.len())));
    }
    for ((name, shape), slot) in expected.into_iter().zip(model.params.tensors_mut()) {
        let k = r.u16()? as usize;
        let found = r.string(k)?;
        if found != name {
            return Err(bad(format!("expected tensor {name}, found {found}")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if dims != shape {
            return Err(bad(format!("{name}: expected shape {shape:?}, found {dims:?}")));
        }
        let data = r.f32s(shape.iter().product())?;
        *slot = Tensor::new(shape, data)?;
    }
    let dim = r.u32()?;
    let vocab = r.u32()?;
    let mut tokens = Vec::with_capacity(vocab);
    for _ in 0..vocab {
        let k = r.u32()?;
        tokens.push(r.string(k)?);
    }
    let mut entries = Vec::with_capacity(vocab);
    for tok in tokens {
        entries.push((tok, r.f32s(dim)?));
    }
    if r.pos != payload.len() {
        return Err(bad("trailing bytes in payload"));
    }
    let table = EmbeddingTable::from_entries(dim, entries)?;
    if table.len() != vocab {
        return Err(bad("duplicate token in vocabulary"));
    }
    Ok((model, table))
}

pub fn save_model(path: impl AsRef<Path>, model: &Cosinet<f32>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, table)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Cosinet<f32>, EmbeddingTable)> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
