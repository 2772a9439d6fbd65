//! Binary cache for a [`ContextStore`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MECCHCTX" | version u32 | graph sha256 [32]
//! type_count u32, then per type: segment_count u32, then per segment:
//!     kind u8 (0 metapath, 1 k-hop) | start type u32 | k u32 | k edge ids u32 (metapath only)
//!     label_len u32 | label bytes
//! then per segment, in the same order:
//!     offset_count u64 | offsets u64* | index_count u64 | indices u32* | empty_count u64
//! ```

use std::fs;
use std::path::Path;

use log::warn;

use super::{ContextKind, ContextStore, SegmentSpec, Segments};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;

pub const CACHE_MAGIC: &[u8; 8] = b"MECCHCTX";
pub const CACHE_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn header(g: &HeteroGraph, layout: &[Vec<SegmentSpec>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut out, CACHE_VERSION);
    out.extend_from_slice(&g.content_hash());
    put_u32(&mut out, layout.len() as u32);
    for segs in layout {
        put_u32(&mut out, segs.len() as u32);
        for s in segs {
            match &s.kind {
                ContextKind::Metapath(p) => {
                    out.push(0);
                    put_u32(&mut out, p.start().0);
                    put_u32(&mut out, p.len() as u32);
                    for r in p.edges() {
                        put_u32(&mut out, r.0);
                    }
                }
                ContextKind::KHop(k) => {
                    out.push(1);
                    put_u32(&mut out, s.node_type.0);
                    put_u32(&mut out, *k as u32);
                }
            }
            put_u32(&mut out, s.label.len() as u32);
            out.extend_from_slice(s.label.as_bytes());
        }
    }
    out
}

pub fn save_cache(path: &Path, g: &HeteroGraph, store: &ContextStore) -> Result<()> {
    let mut out = header(g, &store.layout());
    for s in store.per_type.iter().flatten() {
        put_u64(&mut out, s.offsets.len() as u64);
        for &o in &s.offsets {
            put_u64(&mut out, o as u64);
        }
        put_u64(&mut out, s.indices.len() as u64);
        for &i in &s.indices {
            put_u32(&mut out, i);
        }
        put_u64(&mut out, s.empty_count as u64);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
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

/// Loads a cached store if it exists and was built for exactly this graph
/// and segment layout; returns `Ok(None)` on any mismatch or corruption so
/// the caller rebuilds.
pub fn load_cache(path: &Path, g: &HeteroGraph, layout: &[Vec<SegmentSpec>]) -> Result<Option<ContextStore>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let want = header(g, layout);
    if !bytes.starts_with(&want) {
        warn!("context cache {} is stale, rebuilding", path.display());
        return Ok(None);
    }
    let store = decode_body(&bytes[want.len()..], layout);
    if store.is_none() {
        warn!("context cache {} is corrupt, rebuilding", path.display());
    }
    Ok(store)
}

fn decode_body(body: &[u8], layout: &[Vec<SegmentSpec>]) -> Option<ContextStore> {
    let mut r = Reader { buf: body, pos: 0 };
    let mut per_type = Vec::with_capacity(layout.len());
    for segs in layout {
        let mut out = Vec::with_capacity(segs.len());
        for s in segs {
            let n_off = r.u64()? as usize;
            let offsets = (0..n_off).map(|_| r.u64().map(|o| o as usize)).collect::<Option<Vec<_>>>()?;
            let n_idx = r.u64()? as usize;
            let indices = (0..n_idx).map(|_| r.u32()).collect::<Option<Vec<_>>>()?;
            let empty_count = r.u64()? as usize;
            if offsets.first() != Some(&0)
                || offsets.last() != Some(&indices.len())
                || offsets.windows(2).any(|w| w[0] > w[1])
            {
                return None;
            }
            out.push(Segments {
                node_type: s.node_type,
                kind: s.kind.clone(),
                label: s.label.clone(),
                offsets,
                indices,
                empty_count,
            });
        }
        per_type.push(out);
    }
    (r.pos == body.len()).then_some(ContextStore { per_type })
}
