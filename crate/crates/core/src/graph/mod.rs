//! Typed heterogeneous graph store.
//!
//! Nodes carry a node type and edges an edge type; both are small dense
//! indices into a [`Schema`]. Internal node ids are contiguous per node
//! type (type 0 first, then type 1, ...), so that per-type feature matrices
//! and per-type representation matrices can be addressed by a local row
//! index. Adjacency is stored once per edge type in compressed sparse row
//! form, indexed by the local row of the source node, with sorted columns.

mod builder;
mod io;
mod metapath;
mod schema;
mod tree;

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use builder::GraphBuilder;
pub use io::{load_graph, parse_schema, write_graph};
pub use metapath::{enumerate_metapaths, Metapath, DEFAULT_METAPATH_CAP};
pub use schema::{EdgeType, Schema};
pub use tree::{make_typed_tree, tree_down_metapath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeTypeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeTypeId(pub u32);

/// Internal (dense, per-type contiguous) node id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Raw input features of one node type.
#[derive(Clone, Debug, PartialEq)]
pub enum TypeFeatures {
    /// Row-major `count x dim` matrix, one row per node of the type.
    Dense { dim: usize, data: Vec<f64> },
    /// One-hot identity features, realized downstream as an embedding table.
    Featureless,
}

impl TypeFeatures {
    pub fn dim(&self) -> Option<usize> {
        match self {
            TypeFeatures::Dense { dim, .. } => Some(*dim),
            TypeFeatures::Featureless => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub per_type: Vec<TypeFeatures>,
}

impl FeatureTable {
    pub fn get(&self, t: NodeTypeId) -> &TypeFeatures {
        &self.per_type[t.index()]
    }
}

/// Compressed sparse rows for one edge type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub columns: Vec<NodeId>,
}

impl Csr {
    pub fn row(&self, local: usize) -> &[NodeId] {
        &self.columns[self.offsets[local]..self.offsets[local + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Clone, Debug)]
pub struct HeteroGraph {
    schema: Schema,
    node_type_of: Vec<NodeTypeId>,
    type_offsets: Vec<usize>,
    adjacency: Vec<Csr>,
    ext_ids: Vec<String>,
    ext_index: HashMap<String, NodeId>,
    features: FeatureTable,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.node_type_of == other.node_type_of
            && self.adjacency == other.adjacency
            && self.ext_ids == other.ext_ids
            && self.features == other.features
    }
}

impl HeteroGraph {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn features(&self) -> &FeatureTable {
        &self.features
    }

    pub fn node_count(&self) -> usize {
        self.node_type_of.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Csr::edge_count).sum()
    }

    pub fn node_type(&self, v: NodeId) -> NodeTypeId {
        self.node_type_of[v.index()]
    }

    pub fn type_count(&self, t: NodeTypeId) -> usize {
        self.type_offsets[t.index() + 1] - self.type_offsets[t.index()]
    }

    /// Internal ids of all nodes of type `t`.
    pub fn nodes_of_type(&self, t: NodeTypeId) -> Range<u32> {
        self.type_offsets[t.index()] as u32..self.type_offsets[t.index() + 1] as u32
    }

    pub fn type_offset(&self, t: NodeTypeId) -> usize {
        self.type_offsets[t.index()]
    }

    /// Row of `v` within its node type.
    pub fn local_index(&self, v: NodeId) -> usize {
        v.index() - self.type_offsets[self.node_type(v).index()]
    }

    pub fn ext_id(&self, v: NodeId) -> &str {
        &self.ext_ids[v.index()]
    }

    pub fn node_by_ext(&self, ext: &str) -> Option<NodeId> {
        self.ext_index.get(ext).copied()
    }

    pub fn adjacency(&self, r: EdgeTypeId) -> &Csr {
        &self.adjacency[r.index()]
    }

    /// Sorted out-neighbors of `v` through edge type `r`.
    pub fn neighbors(&self, v: NodeId, r: EdgeTypeId) -> Result<&[NodeId]> {
        let et = self
            .schema
            .edge_types()
            .get(r.index())
            .ok_or_else(|| Error::Contract(format!("unknown edge type id {}", r.0)))?;
        if v.index() >= self.node_count() {
            return Err(Error::Contract(format!("unknown node id {}", v.0)));
        }
        if self.node_type(v) != et.src {
            return Err(Error::Contract(format!(
                "node `{}` has type `{}` but edge type `{}` starts at `{}`",
                self.ext_id(v),
                self.schema.node_type_name(self.node_type(v)),
                et.name,
                self.schema.node_type_name(et.src)
            )));
        }
        Ok(self.adjacency[r.index()].row(self.local_index(v)))
    }

    /// Neighbors without the type check; callers guarantee `φ(v) = src(r)`.
    pub(crate) fn neighbors_unchecked(&self, v: NodeId, r: EdgeTypeId) -> &[NodeId] {
        self.adjacency[r.index()].row(self.local_index(v))
    }

    /// All out-neighbors of `v` over every edge type, in edge-type order.
    pub fn all_neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let t = self.node_type(v);
        self.schema
            .edge_types()
            .iter()
            .enumerate()
            .filter(move |(_, et)| et.src == t)
            .flat_map(move |(r, _)| {
                self.neighbors_unchecked(v, EdgeTypeId(r as u32))
                    .iter()
                    .copied()
            })
    }

    /// Every edge of type `r` as `(src, dst)` in canonical order.
    pub fn edges_of_type(&self, r: EdgeTypeId) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        let src_type = self.schema.edge_type(r).src;
        let base = self.type_offset(src_type);
        let csr = &self.adjacency[r.index()];
        (0..csr.offsets.len() - 1).flat_map(move |row| {
            csr.row(row)
                .iter()
                .map(move |&dst| (NodeId((base + row) as u32), dst))
        })
    }

    /// Copy of the graph with the given `(src, dst)` pairs removed from edge
    /// type `r` and, when `r` declares a reverse, the mirrored pairs removed
    /// from the reverse type.
    pub fn without_edges(&self, r: EdgeTypeId, pairs: &HashSet<(NodeId, NodeId)>) -> HeteroGraph {
        let mut out = self.clone();
        let filter = |csr: &Csr, src_base: usize, drop: &dyn Fn(NodeId, NodeId) -> bool| {
            let mut offsets = Vec::with_capacity(csr.offsets.len());
            let mut columns = Vec::with_capacity(csr.columns.len());
            offsets.push(0);
            for row in 0..csr.offsets.len() - 1 {
                let u = NodeId((src_base + row) as u32);
                columns.extend(csr.row(row).iter().copied().filter(|&w| !drop(u, w)));
                offsets.push(columns.len());
            }
            Csr { offsets, columns }
        };
        let et = self.schema.edge_type(r);
        out.adjacency[r.index()] = filter(
            &self.adjacency[r.index()],
            self.type_offset(et.src),
            &|u, w| pairs.contains(&(u, w)),
        );
        if let Some(rev) = et.reverse {
            let ret = self.schema.edge_type(rev);
            out.adjacency[rev.index()] = filter(
                &self.adjacency[rev.index()],
                self.type_offset(ret.src),
                &|u, w| pairs.contains(&(w, u)),
            );
        }
        out
    }

    /// SHA-256 over a canonical byte encoding of schema, nodes, features and
    /// adjacency. Used to key context caches.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.schema.to_text().as_bytes());
        for (v, ext) in self.ext_ids.iter().enumerate() {
            h.update((ext.len() as u64).to_le_bytes());
            h.update(ext.as_bytes());
            h.update(self.node_type_of[v].0.to_le_bytes());
        }
        for tf in &self.features.per_type {
            match tf {
                TypeFeatures::Dense { dim, data } => {
                    h.update((*dim as u64).to_le_bytes());
                    for x in data {
                        h.update(x.to_le_bytes());
                    }
                }
                TypeFeatures::Featureless => h.update(u64::MAX.to_le_bytes()),
            }
        }
        for csr in &self.adjacency {
            for o in &csr.offsets {
                h.update((*o as u64).to_le_bytes());
            }
            for c in &csr.columns {
                h.update(c.0.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::g1;
    use super::*;

    fn ids(g: &HeteroGraph, names: &[&str]) -> Vec<NodeId> {
        names.iter().map(|n| g.node_by_ext(n).unwrap()).collect()
    }

    #[test]
    fn g1_counts() {
        let g = g1();
        assert_eq!(g.node_count(), 6);
        assert_eq!(g.edge_count(), 14);
    }

    #[test]
    fn neighbors_read_off_fixture() {
        let g = g1();
        let writes = g.schema().edge_type_by_name("writes").unwrap();
        let pub_rev = g.schema().edge_type_by_name("publishes_rev").unwrap();
        let a1 = g.node_by_ext("a1").unwrap();
        let v1 = g.node_by_ext("v1").unwrap();
        assert_eq!(g.neighbors(a1, writes).unwrap(), &ids(&g, &["p1", "p2"])[..]);
        assert_eq!(
            g.neighbors(v1, pub_rev).unwrap(),
            &ids(&g, &["p1", "p2", "p3"])[..]
        );
        let p3 = g.node_by_ext("p3").unwrap();
        let writes_rev = g.schema().edge_type_by_name("writes_rev").unwrap();
        assert_eq!(g.neighbors(p3, writes_rev).unwrap(), &ids(&g, &["a2"])[..]);
    }

    #[test]
    fn neighbors_of_isolated_node_is_empty() {
        let g = super::fixtures::g1_with(|b| {
            b.add_node_named("a9", "A", None).unwrap();
        });
        let writes = g.schema().edge_type_by_name("writes").unwrap();
        let a9 = g.node_by_ext("a9").unwrap();
        assert!(g.neighbors(a9, writes).unwrap().is_empty());
    }

    #[test]
    fn neighbors_type_mismatch_is_contract_error() {
        let g = g1();
        let writes = g.schema().edge_type_by_name("writes").unwrap();
        let v1 = g.node_by_ext("v1").unwrap();
        assert!(matches!(g.neighbors(v1, writes), Err(Error::Contract(_))));
    }

    #[test]
    fn ids_are_per_type_contiguous() {
        let g = g1();
        for t in 0..3 {
            let t = NodeTypeId(t);
            for v in g.nodes_of_type(t) {
                assert_eq!(g.node_type(NodeId(v)), t);
            }
        }
        assert_eq!(g.nodes_of_type(NodeTypeId(1)), 2..5);
    }

    #[test]
    fn without_edges_drops_both_directions() {
        let g = g1();
        let writes = g.schema().edge_type_by_name("writes").unwrap();
        let pair = (g.node_by_ext("a1").unwrap(), g.node_by_ext("p1").unwrap());
        let h = g.without_edges(writes, &[pair].into_iter().collect());
        assert_eq!(h.edge_count(), 12);
        assert_ne!(g.content_hash(), h.content_hash());
    }
}
