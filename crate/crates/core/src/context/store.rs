use rayon::prelude::*;

use super::{build_context, khop_context};
use crate::error::{Error, Result};
use crate::graph::{enumerate_metapaths, HeteroGraph, Metapath, NodeId, NodeTypeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContextKind {
    Metapath(Metapath),
    /// Untyped radius-`k` ball.
    KHop(usize),
}

/// Contexts of every node of one type under one metapath, flattened: the
/// context of the `j`-th node of the type is
/// `indices[offsets[j]..offsets[j + 1]]`, its sorted node set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub node_type: NodeTypeId,
    pub kind: ContextKind,
    pub label: String,
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
    pub empty_count: usize,
}

impl Segments {
    pub fn center_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn segment(&self, local: usize) -> &[u32] {
        &self.indices[self.offsets[local]..self.offsets[local + 1]]
    }

    pub fn byte_size(&self) -> usize {
        self.offsets.len() * std::mem::size_of::<u64>() + self.indices.len() * std::mem::size_of::<u32>()
    }
}

/// Identity of a segment without its data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentSpec {
    pub node_type: NodeTypeId,
    pub kind: ContextKind,
    pub label: String,
}

impl SegmentSpec {
    /// Layout of a store built from `metapaths` by [`build_all_contexts`].
    pub fn for_metapaths(g: &HeteroGraph, metapaths: &[Vec<Metapath>]) -> Vec<Vec<SegmentSpec>> {
        metapaths
            .iter()
            .enumerate()
            .map(|(t, mps)| {
                mps.iter()
                    .map(|p| SegmentSpec {
                        node_type: NodeTypeId(t as u32),
                        kind: ContextKind::Metapath(p.clone()),
                        label: p.label(g.schema()),
                    })
                    .collect()
            })
            .collect()
    }

    /// Layout of a store built by [`build_khop_store`].
    pub fn for_khop(g: &HeteroGraph, k: usize) -> Vec<Vec<SegmentSpec>> {
        g.schema()
            .node_type_ids()
            .map(|t| {
                vec![SegmentSpec {
                    node_type: t,
                    kind: ContextKind::KHop(k),
                    label: khop_label(g, t, k),
                }]
            })
            .collect()
    }
}

fn khop_label(g: &HeteroGraph, t: NodeTypeId, k: usize) -> String {
    format!("{}-khop{k}", g.schema().node_type_name(t))
}

/// All contexts used by a model, grouped by center node type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextStore {
    pub per_type: Vec<Vec<Segments>>,
}

impl ContextStore {
    pub fn segments(&self, t: NodeTypeId) -> &[Segments] {
        &self.per_type[t.index()]
    }

    pub fn byte_size(&self) -> usize {
        self.per_type.iter().flatten().map(Segments::byte_size).sum()
    }

    pub fn layout(&self) -> Vec<Vec<SegmentSpec>> {
        self.per_type
            .iter()
            .map(|segs| {
                segs.iter()
                    .map(|s| SegmentSpec {
                        node_type: s.node_type,
                        kind: s.kind.clone(),
                        label: s.label.clone(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.per_type.iter().flatten().map(|s| s.label.clone()).collect()
    }
}

/// All length-`k` metapaths per node type; types with none get the identity
/// metapath so every type still produces representations.
pub fn standard_metapath_sets(g: &HeteroGraph, k: usize, cap: usize) -> Result<Vec<Vec<Metapath>>> {
    g.schema()
        .node_type_ids()
        .map(|t| {
            let mut mps = enumerate_metapaths(g.schema(), t, k, cap)?;
            if mps.is_empty() {
                mps.push(Metapath::identity(t));
            }
            Ok(mps)
        })
        .collect()
}

pub fn build_all_contexts(g: &HeteroGraph, metapaths: &[Vec<Metapath>]) -> Result<ContextStore> {
    build_all_contexts_with_budget(g, metapaths, None)
}

/// Builds every context, in parallel over centers. The layout does not
/// depend on the number of worker threads. `max_entries` bounds the total
/// number of stored node indices.
pub fn build_all_contexts_with_budget(
    g: &HeteroGraph,
    metapaths: &[Vec<Metapath>],
    max_entries: Option<usize>,
) -> Result<ContextStore> {
    if metapaths.len() != g.schema().node_type_count() {
        return Err(Error::Contract(format!(
            "expected metapath lists for {} node types, got {}",
            g.schema().node_type_count(),
            metapaths.len()
        )));
    }
    let mut total = 0usize;
    let mut per_type = Vec::with_capacity(metapaths.len());
    for (t, mps) in metapaths.iter().enumerate() {
        let t = NodeTypeId(t as u32);
        let mut segs = Vec::with_capacity(mps.len());
        for p in mps {
            if p.start() != t {
                return Err(Error::Contract(format!(
                    "metapath `{}` listed under node type `{}`",
                    p.label(g.schema()),
                    g.schema().node_type_name(t)
                )));
            }
            let sets: Vec<(Vec<NodeId>, bool)> = g
                .nodes_of_type(t)
                .into_par_iter()
                .map(|v| build_context(g, p, NodeId(v)).map(|c| (c.node_set, c.empty_context)))
                .collect::<Result<_>>()?;
            let seg = flatten(t, ContextKind::Metapath(p.clone()), p.label(g.schema()), sets);
            total += seg.indices.len();
            check_budget(total, max_entries)?;
            segs.push(seg);
        }
        per_type.push(segs);
    }
    Ok(ContextStore { per_type })
}

/// One K-hop context segment per node type.
pub fn build_khop_store(g: &HeteroGraph, k: usize, max_entries: Option<usize>) -> Result<ContextStore> {
    let mut total = 0usize;
    let mut per_type = Vec::new();
    for t in g.schema().node_type_ids() {
        let sets: Vec<(Vec<NodeId>, bool)> = g
            .nodes_of_type(t)
            .into_par_iter()
            .map(|v| khop_context(g, NodeId(v), k).map(|c| (c.node_set, false)))
            .collect::<Result<_>>()?;
        let label = khop_label(g, t, k);
        let seg = flatten(t, ContextKind::KHop(k), label, sets);
        total += seg.indices.len();
        check_budget(total, max_entries)?;
        per_type.push(vec![seg]);
    }
    Ok(ContextStore { per_type })
}

fn check_budget(total: usize, max_entries: Option<usize>) -> Result<()> {
    match max_entries {
        Some(limit) if total > limit => Err(Error::ResourceGuard(format!(
            "context store exceeds {limit} node entries"
        ))),
        _ => Ok(()),
    }
}

fn flatten(t: NodeTypeId, kind: ContextKind, label: String, sets: Vec<(Vec<NodeId>, bool)>) -> Segments {
    let mut offsets = Vec::with_capacity(sets.len() + 1);
    let mut indices = Vec::with_capacity(sets.iter().map(|s| s.0.len()).sum());
    let mut empty_count = 0;
    offsets.push(0);
    for (set, empty) in sets {
        empty_count += empty as usize;
        indices.extend(set.into_iter().map(|v| v.0));
        offsets.push(indices.len());
    }
    Segments {
        node_type: t,
        kind,
        label,
        offsets,
        indices,
        empty_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::g1;
    use crate::graph::{make_typed_tree, tree_down_metapath, GraphBuilder};

    #[test]
    fn g1_store_layout() {
        let g = g1();
        let sets = standard_metapath_sets(&g, 2, 64).unwrap();
        assert_eq!(sets[0].len(), 2);
        let store = build_all_contexts(&g, &sets).unwrap();
        let a = store.segments(NodeTypeId(0));
        assert_eq!(a.len(), 2);
        for seg in a {
            assert_eq!(seg.center_count(), 2);
            assert!(seg.offsets.windows(2).all(|w| w[0] < w[1]));
        }
        // a1 under A-P-A: {a1, a2, p1, p2}
        assert_eq!(a[0].segment(0), &[0, 1, 2, 3]);
    }

    #[test]
    fn no_nodes_of_type_gives_empty_segments() {
        let g = g1();
        let schema = g.schema().clone();
        let mut b = GraphBuilder::new(schema);
        b.add_node_named("p", "P", None).unwrap();
        let h = b.build().unwrap();
        let sets = standard_metapath_sets(&h, 2, 64).unwrap();
        let store = build_all_contexts(&h, &sets).unwrap();
        for seg in store.segments(NodeTypeId(0)) {
            assert_eq!(seg.center_count(), 0);
            assert!(seg.indices.is_empty());
        }
    }

    #[test]
    fn tree_root_context_size() {
        let t = make_typed_tree(2, 2, &[NodeTypeId(0), NodeTypeId(1), NodeTypeId(2)]).unwrap();
        let p = tree_down_metapath(&t, 2).unwrap();
        let mut sets = vec![Vec::new(); 3];
        sets[0].push(p);
        let store = build_all_contexts(&t, &sets).unwrap();
        assert_eq!(store.segments(NodeTypeId(0))[0].segment(0).len(), 7);
    }

    #[test]
    fn budget_is_enforced() {
        let g = g1();
        let sets = standard_metapath_sets(&g, 2, 64).unwrap();
        let err = build_all_contexts_with_budget(&g, &sets, Some(5)).unwrap_err();
        assert!(matches!(err, Error::ResourceGuard(_)));
    }

    #[test]
    fn identical_across_thread_counts() {
        let g = g1();
        let sets = standard_metapath_sets(&g, 2, 64).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| build_all_contexts(&g, &sets)).unwrap();
        let b = four.install(|| build_all_contexts(&g, &sets)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_fallback_for_sink_types() {
        let schema = crate::graph::parse_schema("nodetype A\nnodetype B\nedgetype ab A B\n").unwrap();
        let mut b = GraphBuilder::new(schema);
        b.add_node_named("a", "A", None).unwrap();
        b.add_node_named("b", "B", None).unwrap();
        b.add_edge_named("a", "b", "ab").unwrap();
        let g = b.build().unwrap();
        let sets = standard_metapath_sets(&g, 2, 64).unwrap();
        assert!(sets[1][0].is_identity());
        let store = build_all_contexts(&g, &sets).unwrap();
        assert_eq!(store.segments(NodeTypeId(1))[0].segment(0), &[1]);
    }
}
