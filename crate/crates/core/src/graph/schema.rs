use std::collections::HashMap;

use super::{EdgeTypeId, NodeTypeId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    pub src: NodeTypeId,
    pub dst: NodeTypeId,
    /// Declared reverse relation, if any.
    pub reverse: Option<EdgeTypeId>,
}

/// Node type and edge type tables of a heterogeneous graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    node_types: Vec<String>,
    edge_types: Vec<EdgeType>,
}

impl Schema {
    /// Validates and builds a schema. Reverse declarations are made
    /// symmetric: if `r` names `s` as its reverse, `s` gets `r`.
    pub fn new(node_types: Vec<String>, mut edge_types: Vec<EdgeType>) -> Result<Self> {
        if node_types.len() + edge_types.len() <= 2 {
            return Err(Error::Schema(format!(
                "a heterogeneous graph needs |node types| + |edge types| > 2, got {} + {}",
                node_types.len(),
                edge_types.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, n) in node_types.iter().enumerate() {
            if seen.insert(n.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate node type `{n}`")));
            }
        }
        let mut seen = HashMap::new();
        for (i, et) in edge_types.iter().enumerate() {
            if seen.insert(et.name.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate edge type `{}`", et.name)));
            }
            for end in [et.src, et.dst] {
                if end.index() >= node_types.len() {
                    return Err(Error::Schema(format!(
                        "edge type `{}` references unknown node type id {}",
                        et.name, end.0
                    )));
                }
            }
        }
        for i in 0..edge_types.len() {
            let Some(rev) = edge_types[i].reverse else {
                continue;
            };
            let (src, dst) = (edge_types[i].src, edge_types[i].dst);
            let other = edge_types.get(rev.index()).ok_or_else(|| {
                Error::Schema(format!(
                    "edge type `{}` names unknown reverse id {}",
                    edge_types[i].name, rev.0
                ))
            })?;
            if other.src != dst || other.dst != src {
                return Err(Error::Schema(format!(
                    "`{}` and its reverse `{}` do not have swapped endpoints",
                    edge_types[i].name, other.name
                )));
            }
            match other.reverse {
                None => edge_types[rev.index()].reverse = Some(EdgeTypeId(i as u32)),
                Some(back) if back.index() == i => {}
                Some(_) => {
                    return Err(Error::Schema(format!(
                        "inconsistent reverse declarations around `{}`",
                        edge_types[i].name
                    )))
                }
            }
        }
        Ok(Schema {
            node_types,
            edge_types,
        })
    }

    pub fn node_type_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_type_count(&self) -> usize {
        self.edge_types.len()
    }

    pub fn node_type_names(&self) -> &[String] {
        &self.node_types
    }

    pub fn node_type_name(&self, t: NodeTypeId) -> &str {
        &self.node_types[t.index()]
    }

    pub fn node_type_by_name(&self, name: &str) -> Option<NodeTypeId> {
        self.node_types
            .iter()
            .position(|n| n == name)
            .map(|i| NodeTypeId(i as u32))
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn edge_type(&self, r: EdgeTypeId) -> &EdgeType {
        &self.edge_types[r.index()]
    }

    pub fn edge_type_by_name(&self, name: &str) -> Option<EdgeTypeId> {
        self.edge_types
            .iter()
            .position(|e| e.name == name)
            .map(|i| EdgeTypeId(i as u32))
    }

    pub fn node_type_ids(&self) -> impl Iterator<Item = NodeTypeId> {
        (0..self.node_types.len() as u32).map(NodeTypeId)
    }

    /// Serializes to the `schema.txt` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for n in &self.node_types {
            s.push_str(&format!("nodetype {n}\n"));
        }
        for et in &self.edge_types {
            s.push_str(&format!(
                "edgetype {} {} {}",
                et.name,
                self.node_type_name(et.src),
                self.node_type_name(et.dst)
            ));
            if let Some(rev) = et.reverse {
                s.push_str(&format!(" rev={}", self.edge_type(rev).name));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn et(name: &str, s: u32, d: u32, rev: Option<u32>) -> EdgeType {
        EdgeType {
            name: name.into(),
            src: NodeTypeId(s),
            dst: NodeTypeId(d),
            reverse: rev.map(EdgeTypeId),
        }
    }

    #[test]
    fn rejects_homogeneous() {
        let err = Schema::new(vec!["A".into()], vec![et("r", 0, 0, None)]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn reverse_is_made_symmetric() {
        let s = Schema::new(
            vec!["A".into(), "B".into()],
            vec![et("ab", 0, 1, Some(1)), et("ba", 1, 0, None)],
        )
        .unwrap();
        assert_eq!(s.edge_type(EdgeTypeId(1)).reverse, Some(EdgeTypeId(0)));
    }

    #[test]
    fn reverse_with_wrong_endpoints_is_rejected() {
        let err = Schema::new(
            vec!["A".into(), "B".into()],
            vec![et("ab", 0, 1, Some(1)), et("ab2", 0, 1, None)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn dangling_endpoint_is_rejected() {
        let err = Schema::new(vec!["A".into(), "B".into()], vec![et("ax", 0, 5, None)]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }
}
