//! Model checkpoints.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "MECCHCKP" | version u32
//! config: u32 length + JSON bytes
//! schema: u32 length + schema text bytes
//! segment labels: type_count u32, per type: count u32, per label: u32 length + bytes
//! param_count u32, per param: u32 length + name | ndim u32 | dims u64* | data f64*
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, ParamStore};
use crate::context::SegmentSpec;
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MECCHCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents, not yet matched against a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub schema_text: String,
    pub segment_labels: Vec<Vec<String>>,
    pub params: ParamStore,
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &Model, g: &HeteroGraph) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let config = serde_json::to_string(&model.config)
        .map_err(|e| Error::CheckpointFormat(format!("cannot encode config: {e}")))?;
    put_str(&mut out, &config);
    put_str(&mut out, &g.schema().to_text());
    put_u32(&mut out, model.segment_labels.len() as u32);
    for labels in &model.segment_labels {
        put_u32(&mut out, labels.len() as u32);
        for l in labels {
            put_str(&mut out, l);
        }
    }
    put_u32(&mut out, model.params.len() as u32);
    for (name, t) in model.params.iter() {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape().len() as u32);
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &Model, g: &HeteroGraph) -> Result<()> {
    fs::write(path, encode(model, g)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CheckpointFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CheckpointFormat("invalid UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::CheckpointFormat("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config: ModelConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| Error::CheckpointFormat(format!("bad config block: {e}")))?;
    let schema_text = r.string()?;
    let type_count = r.u32()? as usize;
    let mut segment_labels = Vec::new();
    for _ in 0..type_count {
        let n = r.u32()? as usize;
        segment_labels.push((0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?);
    }
    let param_count = r.u32()? as usize;
    let mut params = ParamStore::default();
    for _ in 0..param_count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&n| n.saturating_mul(8) <= bytes.len() - r.pos)
            .ok_or_else(|| Error::CheckpointFormat(format!("parameter `{name}` shape {shape:?} exceeds file")))?;
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointFormat("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config,
        schema_text,
        segment_labels,
        params,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl Model {
    /// Restores a model for `g`. Parameter names and shapes must be exactly
    /// those a fresh model for this graph and layout would have.
    pub fn from_checkpoint(ckpt: Checkpoint, g: &HeteroGraph, layout: &[Vec<SegmentSpec>]) -> Result<Model> {
        if ckpt.schema_text != g.schema().to_text() {
            return Err(Error::Schema("checkpoint was trained on a different graph schema".into()));
        }
        let labels: Vec<Vec<String>> =
            layout.iter().map(|segs| segs.iter().map(|s| s.label.clone()).collect()).collect();
        if labels != ckpt.segment_labels {
            return Err(Error::Schema("checkpoint metapaths differ from the ones derived for this graph".into()));
        }
        let mut model = Model::new(ckpt.config, g, layout)?;
        if model.params.names() != ckpt.params.names() {
            return Err(Error::Schema("checkpoint parameter set does not match the model".into()));
        }
        for (name, t) in ckpt.params.iter() {
            let slot = model.params.get_mut(name).expect("names checked above");
            if slot.shape() != t.shape() {
                return Err(Error::Schema(format!(
                    "parameter `{name}` has shape {:?} in the checkpoint, {:?} for this graph",
                    t.shape(),
                    slot.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::CheckpointFormat(format!("parameter `{name}` holds NaN or Inf")));
            }
            *slot = t.clone();
        }
        Ok(model)
    }
}
