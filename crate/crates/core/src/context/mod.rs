//! Metapath contexts.
//!
//! The context of node `v` under metapath `P = R_1 .. R_K` is the layered
//! subgraph made of every edge that lies on some complete length-`K`
//! instance of `P` starting at `v`. It is built in two passes: a forward
//! expansion along `R_1 .. R_K` with per-layer deduplication, then a
//! backward sweep that drops every node and edge not reaching layer `K`.

mod cache;
mod store;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Metapath, NodeId};

pub use cache::{load_cache, save_cache, CACHE_MAGIC, CACHE_VERSION};
pub use store::{
    build_all_contexts, build_all_contexts_with_budget, build_khop_store, standard_metapath_sets,
    ContextKind, ContextStore, SegmentSpec, Segments,
};

/// Default cap on enumerated instances for the brute-force oracle.
pub const DEFAULT_INSTANCE_GUARD: usize = 1_000_000;

/// Edge `(src, dst)` between `layers[layer]` and `layers[layer + 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextEdge {
    pub layer: usize,
    pub src: NodeId,
    pub dst: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetapathContext {
    pub center: NodeId,
    /// The metapath; the identity metapath for K-hop contexts.
    pub metapath: Metapath,
    /// `layers[i]`: sorted distinct nodes at position `i`.
    pub layers: Vec<Vec<NodeId>>,
    /// Sorted by `(layer, src, dst)`.
    pub edges: Vec<ContextEdge>,
    /// Sorted union of all layers; always contains the center.
    pub node_set: Vec<NodeId>,
    /// No instance starts at the center; the context is `{center}` alone.
    pub empty_context: bool,
}

impl MetapathContext {
    fn singleton(center: NodeId, metapath: Metapath) -> Self {
        MetapathContext {
            center,
            metapath,
            layers: vec![vec![center]],
            edges: Vec::new(),
            node_set: vec![center],
            empty_context: true,
        }
    }
}

fn check_start(g: &HeteroGraph, p: &Metapath, v: NodeId) -> Result<()> {
    if v.index() >= g.node_count() {
        return Err(Error::Contract(format!("unknown node id {}", v.0)));
    }
    if g.node_type(v) != p.start() {
        return Err(Error::Contract(format!(
            "node `{}` has type `{}` but metapath `{}` starts at `{}`",
            g.ext_id(v),
            g.schema().node_type_name(g.node_type(v)),
            p.label(g.schema()),
            g.schema().node_type_name(p.start())
        )));
    }
    Ok(())
}

fn sorted_dedup(mut v: Vec<NodeId>) -> Vec<NodeId> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Builds the pruned metapath context of `v` under `p`.
pub fn build_context(g: &HeteroGraph, p: &Metapath, v: NodeId) -> Result<MetapathContext> {
    check_start(g, p, v)?;
    let k = p.len();

    let mut reached: Vec<Vec<NodeId>> = Vec::with_capacity(k + 1);
    let mut candidates: Vec<Vec<(NodeId, NodeId)>> = Vec::with_capacity(k);
    reached.push(vec![v]);
    for (i, &r) in p.edges().iter().enumerate() {
        let mut hop = Vec::new();
        let mut next = Vec::new();
        for &u in &reached[i] {
            for &w in g.neighbors_unchecked(u, r) {
                hop.push((u, w));
                next.push(w);
            }
        }
        candidates.push(hop);
        reached.push(sorted_dedup(next));
    }
    if reached[k].is_empty() {
        return Ok(MetapathContext::singleton(v, p.clone()));
    }

    let mut layers = vec![Vec::new(); k + 1];
    layers[k] = std::mem::take(&mut reached[k]);
    let mut kept: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); k];
    for i in (0..k).rev() {
        let alive_next = &layers[i + 1];
        kept[i] = candidates[i]
            .iter()
            .copied()
            .filter(|(_, w)| alive_next.binary_search(w).is_ok())
            .collect();
        layers[i] = sorted_dedup(kept[i].iter().map(|&(u, _)| u).collect());
    }

    let edges = kept
        .into_iter()
        .enumerate()
        .flat_map(|(layer, es)| es.into_iter().map(move |(src, dst)| ContextEdge { layer, src, dst }))
        .collect();
    let node_set = sorted_dedup(layers.iter().flatten().copied().collect());
    Ok(MetapathContext {
        center: v,
        metapath: p.clone(),
        layers,
        edges,
        node_set,
        empty_context: false,
    })
}

/// Every complete instance `v_1 .. v_{K+1}` of `p` with `v_1 = v`, by
/// exhaustive depth-first search. Errors once more than `guard` instances
/// have been found.
pub fn oracle_enumerate_instances(
    g: &HeteroGraph,
    p: &Metapath,
    v: NodeId,
    guard: usize,
) -> Result<Vec<Vec<NodeId>>> {
    check_start(g, p, v)?;
    let mut out = Vec::new();
    let mut path = vec![v];
    dfs(g, p, &mut path, &mut out, guard)?;
    Ok(out)
}

fn dfs(
    g: &HeteroGraph,
    p: &Metapath,
    path: &mut Vec<NodeId>,
    out: &mut Vec<Vec<NodeId>>,
    guard: usize,
) -> Result<()> {
    let depth = path.len() - 1;
    if depth == p.len() {
        if out.len() >= guard {
            return Err(Error::ResourceGuard(format!(
                "more than {guard} metapath instances"
            )));
        }
        out.push(path.clone());
        return Ok(());
    }
    let u = *path.last().unwrap();
    for &w in g.neighbors_unchecked(u, p.edges()[depth]) {
        path.push(w);
        dfs(g, p, path, out, guard)?;
        path.pop();
    }
    Ok(())
}

/// Untyped radius-`k` ball around `v` over the union of all edge types,
/// layered by BFS distance. No pruning is applied.
pub fn khop_context(g: &HeteroGraph, v: NodeId, k: usize) -> Result<MetapathContext> {
    if v.index() >= g.node_count() {
        return Err(Error::Contract(format!("unknown node id {}", v.0)));
    }
    let mut dist: HashMap<NodeId, usize> = HashMap::new();
    dist.insert(v, 0);
    let mut layers = vec![vec![v]];
    let mut edges = Vec::new();
    for d in 0..k {
        let mut next = Vec::new();
        for &u in &layers[d] {
            for w in g.all_neighbors(u) {
                match dist.get(&w) {
                    Some(&dw) if dw != d + 1 => continue,
                    Some(_) => {}
                    None => {
                        dist.insert(w, d + 1);
                        next.push(w);
                    }
                }
                edges.push(ContextEdge {
                    layer: d,
                    src: u,
                    dst: w,
                });
            }
        }
        if next.is_empty() {
            break;
        }
        layers.push(sorted_dedup(next));
    }
    edges.sort_unstable();
    edges.dedup();
    let node_set = sorted_dedup(layers.iter().flatten().copied().collect());
    Ok(MetapathContext {
        center: v,
        metapath: Metapath::identity(g.node_type(v)),
        layers,
        edges,
        node_set,
        empty_context: false,
    })
}

/// What a single aggregation step over one metapath touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregationStrategy {
    /// Metapath-guided neighbors: distinct endpoints of complete instances.
    Neighbors,
    /// Metapath instances: every node of every instance, with repetition.
    Instances,
    /// Metapath context: distinct nodes of the pruned context.
    Context,
}

/// Number of node aggregations performed for `v` under `p`.
pub fn count_aggregations(
    g: &HeteroGraph,
    p: &Metapath,
    v: NodeId,
    strategy: AggregationStrategy,
) -> Result<u64> {
    let ctx = build_context(g, p, v)?;
    Ok(match strategy {
        AggregationStrategy::Context => ctx.node_set.len() as u64,
        AggregationStrategy::Neighbors if ctx.empty_context => 0,
        AggregationStrategy::Neighbors => ctx.layers[p.len()].len() as u64,
        AggregationStrategy::Instances if ctx.empty_context => 0,
        AggregationStrategy::Instances => {
            let n = count_instances(&ctx)?;
            n.checked_mul(p.len() as u64 + 1).ok_or_else(|| {
                Error::ResourceGuard("instance node count overflows u64".into())
            })?
        }
    })
}

/// Number of complete instances, by path counting over the pruned layers.
pub fn count_instances(ctx: &MetapathContext) -> Result<u64> {
    if ctx.empty_context {
        return Ok(0);
    }
    let k = ctx.layers.len() - 1;
    let mut counts: Vec<Vec<u64>> = ctx.layers.iter().map(|l| vec![0; l.len()]).collect();
    counts[0][0] = 1;
    for e in &ctx.edges {
        let i = ctx.layers[e.layer].binary_search(&e.src).unwrap();
        let j = ctx.layers[e.layer + 1].binary_search(&e.dst).unwrap();
        let add = counts[e.layer][i];
        counts[e.layer + 1][j] = counts[e.layer + 1][j]
            .checked_add(add)
            .ok_or_else(|| Error::ResourceGuard("instance count overflows u64".into()))?;
    }
    counts[k]
        .iter()
        .try_fold(0u64, |acc, &c| acc.checked_add(c))
        .ok_or_else(|| Error::ResourceGuard("instance count overflows u64".into()))
}
