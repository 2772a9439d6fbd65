use super::{EdgeTypeId, NodeTypeId, Schema};
use crate::error::{Error, Result};

/// Default maximum number of metapaths per start type.
pub const DEFAULT_METAPATH_CAP: usize = 64;

/// A chain of edge types `R_1 .. R_K` with `dst(R_i) = src(R_{i+1})`.
///
/// The empty chain is the identity metapath of its start type; its context
/// is the center node alone.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Metapath {
    start: NodeTypeId,
    edges: Vec<EdgeTypeId>,
}

impl Metapath {
    pub fn new(schema: &Schema, edges: Vec<EdgeTypeId>) -> Result<Self> {
        let first = edges
            .first()
            .ok_or_else(|| Error::Contract("a metapath needs at least one edge type".into()))?;
        for r in &edges {
            if r.index() >= schema.edge_type_count() {
                return Err(Error::Contract(format!("unknown edge type id {}", r.0)));
            }
        }
        for w in edges.windows(2) {
            if schema.edge_type(w[0]).dst != schema.edge_type(w[1]).src {
                return Err(Error::Contract(format!(
                    "edge types `{}` and `{}` do not chain",
                    schema.edge_type(w[0]).name,
                    schema.edge_type(w[1]).name
                )));
            }
        }
        Ok(Metapath {
            start: schema.edge_type(*first).src,
            edges,
        })
    }

    pub fn identity(start: NodeTypeId) -> Self {
        Metapath {
            start,
            edges: Vec::new(),
        }
    }

    pub fn start(&self) -> NodeTypeId {
        self.start
    }

    pub fn edges(&self) -> &[EdgeTypeId] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_identity(&self) -> bool {
        self.edges.is_empty()
    }

    /// Node types `A_1 .. A_{K+1}`.
    pub fn node_types(&self, schema: &Schema) -> Vec<NodeTypeId> {
        std::iter::once(self.start)
            .chain(self.edges.iter().map(|r| schema.edge_type(*r).dst))
            .collect()
    }

    /// The first `k` edge types as a metapath.
    pub fn prefix(&self, k: usize) -> Metapath {
        Metapath {
            start: self.start,
            edges: self.edges[..k].to_vec(),
        }
    }

    /// Human readable form, e.g. `A-writes-P-writes_rev-A`.
    pub fn label(&self, schema: &Schema) -> String {
        let mut s = schema.node_type_name(self.start).to_string();
        for r in &self.edges {
            let et = schema.edge_type(*r);
            s.push('-');
            s.push_str(&et.name);
            s.push('-');
            s.push_str(schema.node_type_name(et.dst));
        }
        s
    }
}

/// All chainable edge-type sequences of exactly `length` starting at
/// `start`, in lexicographic edge-type-id order.
pub fn enumerate_metapaths(
    schema: &Schema,
    start: NodeTypeId,
    length: usize,
    cap: usize,
) -> Result<Vec<Metapath>> {
    if length == 0 {
        return Err(Error::Usage("metapath length must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut stack = Vec::with_capacity(length);
    extend(schema, start, length, &mut stack, &mut out);
    if out.len() > cap {
        return Err(Error::MetapathCap {
            node_type: schema.node_type_name(start).to_string(),
            length,
            count: out.len(),
            cap,
        });
    }
    Ok(out)
}

fn extend(
    schema: &Schema,
    at: NodeTypeId,
    remaining: usize,
    stack: &mut Vec<EdgeTypeId>,
    out: &mut Vec<Metapath>,
) {
    if remaining == 0 {
        out.push(Metapath {
            start: schema.edge_type(stack[0]).src,
            edges: stack.clone(),
        });
        return;
    }
    for (r, et) in schema.edge_types().iter().enumerate() {
        if et.src == at {
            stack.push(EdgeTypeId(r as u32));
            extend(schema, et.dst, remaining - 1, stack, out);
            stack.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures::G1_SCHEMA, parse_schema, EdgeType};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g1_length_two_from_author() {
        let s = parse_schema(G1_SCHEMA).unwrap();
        let a = s.node_type_by_name("A").unwrap();
        let mps = enumerate_metapaths(&s, a, 2, DEFAULT_METAPATH_CAP).unwrap();
        let labels: Vec<_> = mps.iter().map(|m| m.label(&s)).collect();
        assert_eq!(labels, ["A-writes-P-writes_rev-A", "A-writes-P-publishes-V"]);
    }

    #[test]
    fn length_one_is_outgoing_relations() {
        let s = parse_schema(G1_SCHEMA).unwrap();
        let p = s.node_type_by_name("P").unwrap();
        let mps = enumerate_metapaths(&s, p, 1, DEFAULT_METAPATH_CAP).unwrap();
        let expect: Vec<_> = s
            .edge_types()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.src == p)
            .map(|(i, _)| vec![EdgeTypeId(i as u32)])
            .collect();
        assert_eq!(mps.iter().map(|m| m.edges().to_vec()).collect::<Vec<_>>(), expect);
    }

    #[test]
    fn no_outgoing_relation_gives_empty() {
        let s = parse_schema("nodetype A\nnodetype B\nedgetype ab A B\n").unwrap();
        let b = s.node_type_by_name("B").unwrap();
        assert!(enumerate_metapaths(&s, b, 2, 64).unwrap().is_empty());
    }

    #[test]
    fn zero_length_rejected() {
        let s = parse_schema(G1_SCHEMA).unwrap();
        assert!(enumerate_metapaths(&s, NodeTypeId(0), 0, 64).is_err());
    }

    #[test]
    fn cap_exceeded() {
        let s = parse_schema(G1_SCHEMA).unwrap();
        let p = s.node_type_by_name("P").unwrap();
        let err = enumerate_metapaths(&s, p, 6, 4).unwrap_err();
        assert_eq!(err.category(), "metapath_cap_exceeded");
    }

    #[test]
    fn label_and_types() {
        let s = parse_schema(G1_SCHEMA).unwrap();
        let m = Metapath::new(&s, vec![EdgeTypeId(0), EdgeTypeId(2)]).unwrap();
        assert_eq!(m.node_types(&s), vec![NodeTypeId(0), NodeTypeId(1), NodeTypeId(2)]);
        assert!(Metapath::new(&s, vec![EdgeTypeId(0), EdgeTypeId(0)]).is_err());
    }

    fn arb_schema() -> impl Strategy<Value = Schema> {
        (2usize..5).prop_flat_map(|nt| {
            prop::collection::vec((0..nt as u32, 0..nt as u32), 1..7).prop_map(move |ends| {
                let names = (0..nt).map(|i| format!("T{i}")).collect();
                let ets = ends
                    .iter()
                    .enumerate()
                    .map(|(i, &(s, d))| EdgeType {
                        name: format!("r{i}"),
                        src: NodeTypeId(s),
                        dst: NodeTypeId(d),
                        reverse: None,
                    })
                    .collect();
                Schema::new(names, ets).unwrap()
            })
        })
    }

    /// Brute force: every sequence in R^K, filtered for chaining.
    fn brute_count(s: &Schema, start: NodeTypeId, k: usize) -> usize {
        let r = s.edge_type_count();
        let mut count = 0;
        for code in 0..r.pow(k as u32) {
            let mut c = code;
            let mut seq = Vec::with_capacity(k);
            for _ in 0..k {
                seq.push(c % r);
                c /= r;
            }
            let mut at = start;
            let mut ok = true;
            for &e in &seq {
                let et = &s.edge_types()[e];
                if et.src != at {
                    ok = false;
                    break;
                }
                at = et.dst;
            }
            count += ok as usize;
        }
        count
    }

    proptest! {
        #[test]
        fn count_matches_brute_force(s in arb_schema(), k in 1usize..4) {
            for t in s.node_type_ids() {
                let got = enumerate_metapaths(&s, t, k, usize::MAX).unwrap();
                prop_assert_eq!(got.len(), brute_count(&s, t, k));
                prop_assert!(got.windows(2).all(|w| w[0].edges() < w[1].edges()));
            }
        }
    }
}
