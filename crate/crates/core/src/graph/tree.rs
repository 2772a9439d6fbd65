use super::{EdgeType, EdgeTypeId, GraphBuilder, HeteroGraph, Metapath, NodeTypeId, Schema};
use crate::error::{Error, Result};

/// Regular rooted tree: each node above depth `depth` has `branching`
/// children; the node at depth `d` has type `type_cycle[d % len]`.
///
/// Parent-to-child edges use a `down_<parent>_<child>` edge type and carry a
/// reverse `up_<child>_<parent>` edge. The root has external id `n0` and
/// nodes are numbered breadth first.
pub fn make_typed_tree(branching: usize, depth: usize, type_cycle: &[NodeTypeId]) -> Result<HeteroGraph> {
    if branching == 0 || depth == 0 {
        return Err(Error::Usage("tree branching and depth must be positive".into()));
    }
    if type_cycle.len() < 2 {
        return Err(Error::Usage("type cycle needs at least two entries".into()));
    }
    let node_types = type_cycle.iter().map(|t| t.index()).max().unwrap() + 1;
    let names: Vec<String> = (0..node_types).map(|i| format!("t{i}")).collect();

    let mut pairs: Vec<(NodeTypeId, NodeTypeId)> = Vec::new();
    for d in 0..depth {
        let p = (type_cycle[d % type_cycle.len()], type_cycle[(d + 1) % type_cycle.len()]);
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let mut edge_types = Vec::with_capacity(2 * pairs.len());
    for (i, &(p, c)) in pairs.iter().enumerate() {
        edge_types.push(EdgeType {
            name: format!("down_{}_{}", names[p.index()], names[c.index()]),
            src: p,
            dst: c,
            reverse: Some(EdgeTypeId((2 * i + 1) as u32)),
        });
        edge_types.push(EdgeType {
            name: format!("up_{}_{}", names[c.index()], names[p.index()]),
            src: c,
            dst: p,
            reverse: Some(EdgeTypeId((2 * i) as u32)),
        });
    }
    let schema = Schema::new(names, edge_types)?;
    let down = |d: usize| {
        let p = (type_cycle[d % type_cycle.len()], type_cycle[(d + 1) % type_cycle.len()]);
        EdgeTypeId((2 * pairs.iter().position(|&x| x == p).unwrap()) as u32)
    };

    let mut b = GraphBuilder::new(schema);
    let mut next = 0usize;
    let mut frontier = vec![b.add_node(&format!("n{next}"), type_cycle[0], None)?];
    next += 1;
    for d in 0..depth {
        let child_type = type_cycle[(d + 1) % type_cycle.len()];
        let r = down(d);
        let rev = EdgeTypeId(r.0 + 1);
        let mut children = Vec::with_capacity(frontier.len() * branching);
        for &parent in &frontier {
            for _ in 0..branching {
                let c = b.add_node(&format!("n{next}"), child_type, None)?;
                next += 1;
                b.add_edge(parent, c, r)?;
                b.add_edge(c, parent, rev)?;
                children.push(c);
            }
        }
        frontier = children;
    }
    b.build()
}

/// The all-downward metapath of length `k` from the root of a tree built by
/// [`make_typed_tree`].
pub fn tree_down_metapath(tree: &HeteroGraph, k: usize) -> Result<Metapath> {
    let schema = tree.schema();
    let root = tree
        .node_by_ext("n0")
        .ok_or_else(|| Error::Contract("graph has no root `n0`".into()))?;
    let mut at = tree.node_type(root);
    let mut edges = Vec::with_capacity(k);
    for _ in 0..k {
        let (r, et) = schema
            .edge_types()
            .iter()
            .enumerate()
            .find(|(_, et)| et.src == at && et.name.starts_with("down_"))
            .ok_or_else(|| Error::Contract("tree is shallower than the requested metapath".into()))?;
        edges.push(EdgeTypeId(r as u32));
        at = et.dst;
    }
    Metapath::new(schema, edges)
}
