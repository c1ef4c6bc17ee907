use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ModelSpec, ParamLayout, Segment};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMLCPAR1";

/// 64-bit FNV-1a of a model's canonical description.
pub fn spec_hash<S: ModelSpec + ?Sized>(spec: &S) -> u64 {
    fnv1a(spec.describe().as_bytes())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Parameters as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec_hash: u64,
    pub layout: ParamLayout,
    pub params: Tensor,
}

/// Little-endian layout:
///
/// ```text
/// magic "EMLCPAR1" | spec_hash u64 | n_segments u32
/// per segment: name_len u32 | name utf-8 | offset u64 | rank u32 | dims u64…
/// n_params u64 | params f64…
/// ```
pub fn write_checkpoint<S: ModelSpec + ?Sized>(
    path: impl AsRef<Path>,
    spec: &S,
    params: &Tensor,
) -> Result<()> {
    let path = path.as_ref();
    let layout = spec.layout();
    params.expect_shape(&[layout.total()], "checkpoint params")?;
    let mut buf = Vec::with_capacity(64 + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&spec_hash(spec).to_le_bytes());
    buf.extend_from_slice(&(layout.segments().len() as u32).to_le_bytes());
    for s in layout.segments() {
        buf.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.name.as_bytes());
        buf.extend_from_slice(&(s.offset as u64).to_le_bytes());
        buf.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
        for &d in &s.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse(&bytes)
        .ok_or_else(|| Error::format(path, "malformed parameter checkpoint"))?
        .map_err(|m| Error::format(path, m))
}

fn parse(bytes: &[u8]) -> Option<std::result::Result<Checkpoint, String>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Some(Err("bad magic".into()));
    }
    let spec_hash = r.u64()?;
    let n = r.u32()? as usize;
    let mut segments = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).ok()?;
        let offset = r.u64()? as usize;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()?;
        segments.push(Segment {
            name,
            offset,
            shape,
        });
    }
    let layout = match ParamLayout::from_segments(segments) {
        Ok(l) => l,
        Err(e) => return Some(Err(e.to_string())),
    };
    let count = r.u64()? as usize;
    if count != layout.total() || count == 0 {
        return Some(Err("parameter count disagrees with segment table".into()));
    }
    let params = (0..count).map(|_| r.f64()).collect::<Option<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Some(Err("trailing bytes".into()));
    }
    Some(Ok(Checkpoint {
        spec_hash,
        layout,
        params: Tensor::vector(params),
    }))
}
