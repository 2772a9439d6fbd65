use std::collections::HashMap;

use log::info;

use super::{Csr, EdgeTypeId, FeatureTable, HeteroGraph, NodeId, NodeTypeId, Schema, TypeFeatures};
use crate::error::{Error, Result};

struct PendingNode {
    ext: String,
    node_type: NodeTypeId,
    features: Option<Vec<f64>>,
}

/// Accumulates nodes and edges, then produces a canonical [`HeteroGraph`].
///
/// Nodes keep their insertion order within each node type; the final ids
/// place all nodes of type 0 first, then type 1, and so on.
pub struct GraphBuilder {
    schema: Schema,
    nodes: Vec<PendingNode>,
    ext_index: HashMap<String, usize>,
    edges: Vec<(usize, usize, EdgeTypeId)>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Self {
        GraphBuilder {
            schema,
            nodes: Vec::new(),
            ext_index: HashMap::new(),
            edges: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Adds a node; returns its builder-local handle.
    pub fn add_node(
        &mut self,
        ext: &str,
        node_type: NodeTypeId,
        features: Option<Vec<f64>>,
    ) -> Result<usize> {
        if node_type.index() >= self.schema.node_type_count() {
            return Err(Error::Schema(format!("unknown node type id {}", node_type.0)));
        }
        if self.ext_index.contains_key(ext) {
            return Err(Error::Integrity(format!("duplicate node id `{ext}`")));
        }
        if let Some(f) = &features {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::Integrity(format!("node `{ext}` has non-finite features")));
            }
        }
        let h = self.nodes.len();
        self.nodes.push(PendingNode {
            ext: ext.to_string(),
            node_type,
            features,
        });
        self.ext_index.insert(ext.to_string(), h);
        Ok(h)
    }

    pub fn add_node_named(
        &mut self,
        ext: &str,
        type_name: &str,
        features: Option<Vec<f64>>,
    ) -> Result<usize> {
        let t = self
            .schema
            .node_type_by_name(type_name)
            .ok_or_else(|| Error::Schema(format!("unknown node type `{type_name}`")))?;
        self.add_node(ext, t, features)
    }

    pub fn handle(&self, ext: &str) -> Option<usize> {
        self.ext_index.get(ext).copied()
    }

    pub fn add_edge(&mut self, src: usize, dst: usize, r: EdgeTypeId) -> Result<()> {
        let et = self
            .schema
            .edge_types()
            .get(r.index())
            .ok_or_else(|| Error::Schema(format!("unknown edge type id {}", r.0)))?;
        let (Some(s), Some(d)) = (self.nodes.get(src), self.nodes.get(dst)) else {
            return Err(Error::Integrity(format!("edge references unknown node handle ({src}, {dst})")));
        };
        if s.node_type != et.src || d.node_type != et.dst {
            return Err(Error::Schema(format!(
                "edge `{}` -> `{}` of type `{}` connects `{}` -> `{}`, expected `{}` -> `{}`",
                s.ext,
                d.ext,
                et.name,
                self.schema.node_type_name(s.node_type),
                self.schema.node_type_name(d.node_type),
                self.schema.node_type_name(et.src),
                self.schema.node_type_name(et.dst),
            )));
        }
        self.edges.push((src, dst, r));
        Ok(())
    }

    pub fn add_edge_named(&mut self, src: &str, dst: &str, edge_type: &str) -> Result<()> {
        let r = self
            .schema
            .edge_type_by_name(edge_type)
            .ok_or_else(|| Error::Schema(format!("unknown edge type `{edge_type}`")))?;
        let s = self
            .handle(src)
            .ok_or_else(|| Error::Integrity(format!("edge endpoint `{src}` is not a known node")))?;
        let d = self
            .handle(dst)
            .ok_or_else(|| Error::Integrity(format!("edge endpoint `{dst}` is not a known node")))?;
        self.add_edge(s, d, r)
    }

    pub fn build(self) -> Result<HeteroGraph> {
        let schema = self.schema;
        let nt = schema.node_type_count();

        let mut counts = vec![0usize; nt];
        for n in &self.nodes {
            counts[n.node_type.index()] += 1;
        }
        let mut type_offsets = vec![0usize; nt + 1];
        for t in 0..nt {
            type_offsets[t + 1] = type_offsets[t] + counts[t];
        }
        let mut cursor = type_offsets.clone();
        let mut new_id = vec![0u32; self.nodes.len()];
        for (h, n) in self.nodes.iter().enumerate() {
            let t = n.node_type.index();
            new_id[h] = cursor[t] as u32;
            cursor[t] += 1;
        }

        let mut node_type_of = vec![NodeTypeId(0); self.nodes.len()];
        let mut ext_ids = vec![String::new(); self.nodes.len()];
        let mut ext_index = HashMap::with_capacity(self.nodes.len());
        for (h, n) in self.nodes.iter().enumerate() {
            let id = new_id[h] as usize;
            node_type_of[id] = n.node_type;
            ext_ids[id] = n.ext.clone();
            ext_index.insert(n.ext.clone(), NodeId(id as u32));
        }

        let mut per_type: Vec<Option<TypeFeatures>> = vec![None; nt];
        let mut ordered: Vec<&PendingNode> = Vec::with_capacity(self.nodes.len());
        ordered.resize_with(self.nodes.len(), || &self.nodes[0]);
        for (h, n) in self.nodes.iter().enumerate() {
            ordered[new_id[h] as usize] = n;
        }
        for t in 0..nt {
            let members = &ordered[type_offsets[t]..type_offsets[t + 1]];
            let feats = match members.first().and_then(|n| n.features.as_ref()) {
                None => {
                    if let Some(n) = members.iter().find(|n| n.features.is_some()) {
                        return Err(Error::Integrity(format!(
                            "node type `{}` mixes featureless and featured nodes (e.g. `{}`)",
                            schema.node_type_name(NodeTypeId(t as u32)),
                            n.ext
                        )));
                    }
                    TypeFeatures::Featureless
                }
                Some(first) => {
                    let dim = first.len();
                    let mut data = Vec::with_capacity(dim * members.len());
                    for n in members {
                        match &n.features {
                            Some(f) if f.len() == dim => data.extend_from_slice(f),
                            _ => {
                                return Err(Error::Integrity(format!(
                                    "node `{}` does not have the {dim}-dimensional features of its type `{}`",
                                    n.ext,
                                    schema.node_type_name(NodeTypeId(t as u32))
                                )))
                            }
                        }
                    }
                    TypeFeatures::Dense { dim, data }
                }
            };
            per_type[t] = Some(feats);
        }
        let features = FeatureTable {
            per_type: per_type.into_iter().map(Option::unwrap).collect(),
        };

        let mut by_type: Vec<Vec<(u32, u32)>> = vec![Vec::new(); schema.edge_type_count()];
        for &(s, d, r) in &self.edges {
            by_type[r.index()].push((new_id[s], new_id[d]));
        }
        let mut duplicates = 0usize;
        let mut adjacency = Vec::with_capacity(by_type.len());
        for (r, mut pairs) in by_type.into_iter().enumerate() {
            pairs.sort_unstable();
            let before = pairs.len();
            pairs.dedup();
            duplicates += before - pairs.len();
            let src = schema.edge_types()[r].src.index();
            let rows = counts[src];
            let base = type_offsets[src] as u32;
            let mut offsets = vec![0usize; rows + 1];
            for &(s, _) in &pairs {
                offsets[(s - base) as usize + 1] += 1;
            }
            for i in 0..rows {
                offsets[i + 1] += offsets[i];
            }
            let columns = pairs.iter().map(|&(_, d)| NodeId(d)).collect();
            adjacency.push(Csr { offsets, columns });
        }
        if duplicates > 0 {
            info!("dropped {duplicates} duplicate (src, dst, type) edges");
        }

        let graph = HeteroGraph {
            schema,
            node_type_of,
            type_offsets,
            adjacency,
            ext_ids,
            ext_index,
            features,
        };
        check_reverse_pairs(&graph)?;
        Ok(graph)
    }
}

fn check_reverse_pairs(g: &HeteroGraph) -> Result<()> {
    for (r, et) in g.schema().edge_types().iter().enumerate() {
        let Some(rev) = et.reverse else { continue };
        for (u, w) in g.edges_of_type(EdgeTypeId(r as u32)) {
            if g.neighbors_unchecked(w, rev).binary_search(&u).is_err() {
                return Err(Error::Integrity(format!(
                    "edge `{}` -> `{}` of type `{}` has no mirror in its reverse `{}`",
                    g.ext_id(u),
                    g.ext_id(w),
                    et.name,
                    g.schema().edge_type(rev).name
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures::G1_SCHEMA, parse_schema};
    use super::*;

    #[test]
    fn duplicate_edges_are_merged() {
        let mut b = GraphBuilder::new(parse_schema(G1_SCHEMA).unwrap());
        b.add_node_named("a", "A", None).unwrap();
        b.add_node_named("p", "P", None).unwrap();
        for _ in 0..3 {
            b.add_edge_named("a", "p", "writes").unwrap();
        }
        b.add_edge_named("p", "a", "writes_rev").unwrap();
        let g = b.build().unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn missing_reverse_is_integrity_error() {
        let mut b = GraphBuilder::new(parse_schema(G1_SCHEMA).unwrap());
        b.add_node_named("a", "A", None).unwrap();
        b.add_node_named("p", "P", None).unwrap();
        b.add_edge_named("a", "p", "writes").unwrap();
        assert!(matches!(b.build(), Err(Error::Integrity(_))));
    }

    #[test]
    fn type_mismatched_edge_is_schema_error() {
        let mut b = GraphBuilder::new(parse_schema(G1_SCHEMA).unwrap());
        b.add_node_named("a", "A", None).unwrap();
        b.add_node_named("v", "V", None).unwrap();
        assert!(matches!(
            b.add_edge_named("a", "v", "writes"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn mixed_feature_dims_rejected() {
        let mut b = GraphBuilder::new(parse_schema(G1_SCHEMA).unwrap());
        b.add_node_named("a", "A", Some(vec![1.0, 2.0])).unwrap();
        b.add_node_named("b", "A", Some(vec![1.0])).unwrap();
        assert!(matches!(b.build(), Err(Error::Integrity(_))));
    }

    #[test]
    fn non_finite_features_rejected() {
        let mut b = GraphBuilder::new(parse_schema(G1_SCHEMA).unwrap());
        assert!(b.add_node_named("a", "A", Some(vec![f64::NAN])).is_err());
    }

    #[test]
    fn interleaved_insertion_is_regrouped_by_type() {
        let mut b = GraphBuilder::new(parse_schema(G1_SCHEMA).unwrap());
        b.add_node_named("p", "P", Some(vec![3.0])).unwrap();
        b.add_node_named("a", "A", Some(vec![1.0, 1.0])).unwrap();
        b.add_node_named("q", "P", Some(vec![4.0])).unwrap();
        let g = b.build().unwrap();
        assert_eq!(g.node_by_ext("a"), Some(NodeId(0)));
        assert_eq!(g.node_by_ext("p"), Some(NodeId(1)));
        assert_eq!(g.node_by_ext("q"), Some(NodeId(2)));
        assert_eq!(
            g.features().get(NodeTypeId(1)),
            &TypeFeatures::Dense {
                dim: 1,
                data: vec![3.0, 4.0]
            }
        );
    }
}
