//! The context-encoding network: per-type input projection, per-metapath
//! context pooling, convolutional metapath fusion and a DistMult decoder.

mod checkpoint;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{
    build_all_contexts_with_budget, build_khop_store, standard_metapath_sets, ContextStore, SegmentSpec, Segments,
};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeTypeId, TypeFeatures, DEFAULT_METAPATH_CAP};
use crate::tensor::{Tape, Tensor, Var};

pub use checkpoint::{decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Metapath contexts, mean pooling, convolutional fusion.
    Mecch,
    /// Untyped K-hop balls instead of metapath contexts.
    Khop,
    /// Attention pooling over each context.
    Ace,
    /// Element-wise mean over metapaths instead of learned fusion.
    Mmf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mecch, Variant::Khop, Variant::Ace, Variant::Mmf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mecch => "mecch",
            Variant::Khop => "khop",
            Variant::Ace => "ace",
            Variant::Mmf => "mmf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected mecch, khop, ace or mmf)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::NodeClassification => "node_classification",
            Task::LinkPrediction => "link_prediction",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub metapath_length: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub task: Task,
    /// Class count for classification, embedding width for link prediction.
    pub output_dim: usize,
    pub seed: u64,
    pub metapath_cap: usize,
}

impl ModelConfig {
    pub fn new(task: Task, output_dim: usize) -> Self {
        ModelConfig {
            hidden_dim: 64,
            metapath_length: 2,
            num_layers: 2,
            dropout: 0.0,
            variant: Variant::Mecch,
            task,
            output_dim,
            seed: 0,
            metapath_cap: DEFAULT_METAPATH_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("hidden_dim and output_dim must be positive".into()));
        }
        if self.metapath_length == 0 || self.num_layers == 0 {
            return Err(Error::Config("metapath_length and num_layers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.metapath_cap == 0 {
            return Err(Error::Config("metapath_cap must be positive".into()));
        }
        Ok(())
    }

    /// Output width of layer `l` (1-based).
    pub fn layer_width(&self, l: usize) -> usize {
        if l == self.num_layers {
            self.output_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Builds the context store the configured variant aggregates over.
pub fn build_store(g: &HeteroGraph, config: &ModelConfig, max_entries: Option<usize>) -> Result<ContextStore> {
    match config.variant {
        Variant::Khop => build_khop_store(g, config.metapath_length, max_entries),
        _ => {
            let sets = standard_metapath_sets(g, config.metapath_length, config.metapath_cap)?;
            build_all_contexts_with_budget(g, &sets, max_entries)
        }
    }
}

/// Segment layout [`build_store`] would produce, without building it.
pub fn store_layout(g: &HeteroGraph, config: &ModelConfig) -> Result<Vec<Vec<SegmentSpec>>> {
    match config.variant {
        Variant::Khop => Ok(SegmentSpec::for_khop(g, config.metapath_length)),
        _ => {
            let sets = standard_metapath_sets(g, config.metapath_length, config.metapath_cap)?;
            Ok(SegmentSpec::for_metapaths(g, &sets))
        }
    }
}

/// Parameter handles of one forward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Per-type outputs of the final layer.
pub struct ForwardOutput {
    pub per_type: Vec<Var>,
}

impl ForwardOutput {
    pub fn of(&self, t: NodeTypeId) -> Var {
        self.per_type[t.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    /// Segment labels per node type, in store order.
    segment_labels: Vec<Vec<String>>,
    type_names: Vec<String>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-limit..=limit)).collect())
        .expect("shape matches generated length")
}

impl Model {
    /// Fresh model with seeded initialization: Glorot-uniform matrices and
    /// embeddings, zero biases, fusion vectors `1/|P_A|`.
    pub fn new(config: ModelConfig, g: &HeteroGraph, layout: &[Vec<SegmentSpec>]) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let schema = g.schema();
        if layout.len() != schema.node_type_count() {
            return Err(Error::Contract("segment layout does not cover every node type".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let type_names: Vec<String> = schema.node_type_names().to_vec();
        let segment_labels: Vec<Vec<String>> =
            layout.iter().map(|segs| segs.iter().map(|s| s.label.clone()).collect()).collect();
        let d = config.hidden_dim;
        let mut params = ParamStore::default();

        for t in schema.node_type_ids() {
            let name = &type_names[t.index()];
            match g.features().get(t) {
                TypeFeatures::Dense { dim, .. } => {
                    params.insert(format!("input.{name}.W"), glorot(&mut rng, *dim, d, &[d, *dim]))?;
                    params.insert(format!("input.{name}.b"), Tensor::zeros(&[d]))?;
                }
                TypeFeatures::Featureless => {
                    let n = g.type_count(t);
                    params.insert(format!("input.{name}.emb"), glorot(&mut rng, n, d, &[n, d]))?;
                }
            }
        }
        for l in 1..=config.num_layers {
            let out = config.layer_width(l);
            for t in schema.node_type_ids() {
                let name = &type_names[t.index()];
                let labels = &segment_labels[t.index()];
                if labels.is_empty() {
                    return Err(Error::Contract(format!("node type `{name}` has no contexts")));
                }
                params.insert(format!("layer{l}.{name}.W"), glorot(&mut rng, d, out, &[out, d]))?;
                params.insert(format!("layer{l}.{name}.b"), Tensor::zeros(&[out]))?;
                for label in labels {
                    if config.variant != Variant::Mmf {
                        params.insert(
                            format!("layer{l}.{name}.a.{label}"),
                            Tensor::full(&[d], 1.0 / labels.len() as f64),
                        )?;
                    }
                    if config.variant == Variant::Ace {
                        params.insert(format!("layer{l}.{name}.q.{label}"), glorot(&mut rng, 2 * d, 1, &[2 * d]))?;
                    }
                }
            }
        }
        if config.task == Task::LinkPrediction {
            params.insert("lp.w".into(), Tensor::full(&[config.output_dim], 1.0))?;
        }
        Ok(Model {
            config,
            params,
            segment_labels,
            type_names,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn segment_labels(&self) -> &[Vec<String>] {
        &self.segment_labels
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self.params.iter().map(|(_, t)| tape.leaf(t.clone())).collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    fn var(&self, bound: &[Var], name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| bound[i])
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    /// Full-graph forward pass. `bound` holds one var per parameter in
    /// store order (see [`Model::bind`]). Dropout is active only when
    /// `training` is set.
    /// Input projection of every node type, dropout applied when training.
    pub fn preprocess<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        g: &HeteroGraph,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let d = self.config.hidden_dim;
        let mut h = Vec::with_capacity(self.type_names.len());
        for t in g.schema().node_type_ids() {
            let name = &self.type_names[t.index()];
            let h0 = match g.features().get(t) {
                TypeFeatures::Dense { dim, data } => {
                    let x = tape.constant(Tensor::new(vec![g.type_count(t), *dim], data.clone())?)?;
                    let w = self.var(bound, &format!("input.{name}.W"))?;
                    let b = self.var(bound, &format!("input.{name}.b"))?;
                    tape.linear(x, w, b)?
                }
                TypeFeatures::Featureless => self.var(bound, &format!("input.{name}.emb"))?,
            };
            if tape.value(h0).shape() != [g.type_count(t), d] {
                return Err(Error::Shape(format!(
                    "input projection of `{name}` gives {:?}, need [{}, {d}]",
                    tape.value(h0).shape(),
                    g.type_count(t)
                )));
            }
            h.push(tape.dropout(h0, self.config.dropout, training, rng)?);
        }
        Ok(h)
    }

    /// Full-graph forward pass. `bound` holds one var per parameter in
    /// store order (see [`Model::bind`]). Dropout is active only when
    /// `training` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        g: &HeteroGraph,
        store: &ContextStore,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        self.check_store(g, store)?;
        let cfg = &self.config;
        let d = cfg.hidden_dim;
        let mut h = self.preprocess(tape, bound, g, training, rng)?;

        for l in 1..=cfg.num_layers {
            let h_all = tape.concat_rows(h.clone())?;
            let last = l == cfg.num_layers;
            let mut next = Vec::with_capacity(h.len());
            for t in g.schema().node_type_ids() {
                let name = &self.type_names[t.index()];
                let mut encoded = Vec::new();
                for seg in store.segments(t) {
                    let e = match cfg.variant {
                        Variant::Ace => {
                            let q = self.var(bound, &format!("layer{l}.{name}.q.{}", seg.label))?;
                            encode_context_ace(tape, g, h_all, seg, q)?
                        }
                        _ => encode_context(tape, h_all, seg)?,
                    };
                    encoded.push(e);
                }
                let scales = match cfg.variant {
                    Variant::Mmf => {
                        let c = tape.constant(Tensor::full(&[d], 1.0 / encoded.len() as f64))?;
                        vec![c; encoded.len()]
                    }
                    _ => store
                        .segments(t)
                        .iter()
                        .map(|seg| self.var(bound, &format!("layer{l}.{name}.a.{}", seg.label)))
                        .collect::<Result<_>>()?,
                };
                let w = self.var(bound, &format!("layer{l}.{name}.W"))?;
                let b = self.var(bound, &format!("layer{l}.{name}.b"))?;
                let mut out = fuse(tape, encoded, scales, w, b, last)?;
                if !last {
                    out = tape.dropout(out, cfg.dropout, training, rng)?;
                }
                next.push(out);
            }
            h = next;
        }
        Ok(ForwardOutput { per_type: h })
    }

    /// DistMult scores of `(row in src, row in dst)` pairs.
    pub fn score_pairs(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        src: Var,
        dst: Var,
        pairs: &[(u32, u32)],
    ) -> Result<Var> {
        let w = self.var(bound, "lp.w")?;
        let left = tape.gather_rows(src, pairs.iter().map(|p| p.0).collect())?;
        let right = tape.gather_rows(dst, pairs.iter().map(|p| p.1).collect())?;
        tape.row_distmult(left, right, w)
    }

    /// Evaluation-mode outputs as plain tensors.
    pub fn infer(&self, g: &HeteroGraph, store: &ContextStore) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        // dropout is off, so the stream is never drawn from
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&mut tape, bound.vars(), g, store, false, &mut rng)?;
        Ok(out.per_type.iter().map(|v| tape.value(*v).clone()).collect())
    }

    fn check_store(&self, g: &HeteroGraph, store: &ContextStore) -> Result<()> {
        if store.per_type.len() != self.segment_labels.len() || g.schema().node_type_names() != self.type_names {
            return Err(Error::Contract("context store does not match the model's node types".into()));
        }
        for (t, segs) in store.per_type.iter().enumerate() {
            let labels: Vec<&str> = segs.iter().map(|s| s.label.as_str()).collect();
            if labels != self.segment_labels[t] {
                return Err(Error::Contract(format!(
                    "context store segments {labels:?} do not match the model's {:?}",
                    self.segment_labels[t]
                )));
            }
            if segs.iter().any(|s| s.center_count() != g.type_count(NodeTypeId(t as u32))) {
                return Err(Error::Contract("context store was built for a different graph".into()));
            }
        }
        Ok(())
    }
}

/// Mean of `h_all` rows over each context of `seg`; row `j` belongs to the
/// `j`-th node of the segment's type.
pub fn encode_context(tape: &mut Tape, h_all: Var, seg: &Segments) -> Result<Var> {
    let gathered = tape.gather_rows(h_all, seg.indices.clone())?;
    tape.segment_mean(gathered, seg.offsets.clone())
}

/// Attention-weighted pooling of each context of `seg`, scored against the
/// center with query `q` of length `2d`.
pub fn encode_context_ace(tape: &mut Tape, g: &HeteroGraph, h_all: Var, seg: &Segments, q: Var) -> Result<Var> {
    if seg.center_count() != g.type_count(seg.node_type) {
        return Err(Error::Contract("segments were built for a different graph".into()));
    }
    tape.attention_pool(
        h_all,
        q,
        g.nodes_of_type(seg.node_type).collect(),
        seg.indices.clone(),
        seg.offsets.clone(),
    )
}

/// `σ(W (Σ_P a_P ⊙ h_P) + b)` with `σ` = ReLU, or identity when `last`.
pub fn fuse(tape: &mut Tape, encoded: Vec<Var>, scales: Vec<Var>, w: Var, b: Var, last: bool) -> Result<Var> {
    let z = tape.scaled_sum(encoded, scales)?;
    let out = tape.linear(z, w, b)?;
    if last {
        Ok(out)
    } else {
        tape.relu(out)
    }
}

#[cfg(test)]
mod tests;
