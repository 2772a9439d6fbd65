//! Text formats:
//!
//! * `schema.txt`: `nodetype <name>` and `edgetype <name> <src> <dst> [rev=<name>]`
//! * `nodes.tsv`: `<ext_id>\t<type_name>\t<features>` where features are
//!   comma-separated floats or `-` for featureless
//! * `edges.tsv`: `<src_ext_id>\t<dst_ext_id>\t<edge_type_name>`
//!
//! Blank lines and `#` comment lines are ignored everywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EdgeType, EdgeTypeId, GraphBuilder, HeteroGraph, NodeId, NodeTypeId, Schema, TypeFeatures};
use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines with their 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_schema(text: &str) -> Result<Schema> {
    parse_schema_at(text, Path::new("<schema>"))
}

fn parse_schema_at(text: &str, path: &Path) -> Result<Schema> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut node_types: Vec<String> = Vec::new();
    let mut raw_edges: Vec<(usize, String, String, String, Option<String>)> = Vec::new();
    for (line, l) in data_lines(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["nodetype", name] => node_types.push(name.to_string()),
            ["edgetype", name, src, dst, rest @ ..] => {
                let rev = match rest {
                    [] => None,
                    [r] => Some(
                        r.strip_prefix("rev=")
                            .ok_or_else(|| perr(line, format!("expected `rev=<name>`, got `{r}`")))?
                            .to_string(),
                    ),
                    _ => return Err(perr(line, "too many fields in edgetype line".into())),
                };
                raw_edges.push((line, name.to_string(), src.to_string(), dst.to_string(), rev));
            }
            _ => return Err(perr(line, format!("unrecognized schema line `{l}`"))),
        }
    }
    let type_id = |line: usize, name: &str| {
        node_types
            .iter()
            .position(|n| n == name)
            .map(|i| NodeTypeId(i as u32))
            .ok_or_else(|| Error::Schema(format!("line {line}: unknown node type `{name}`")))
    };
    let mut edge_types = Vec::with_capacity(raw_edges.len());
    for (line, name, src, dst, rev) in &raw_edges {
        let reverse = match rev {
            None => None,
            Some(r) => Some(
                raw_edges
                    .iter()
                    .position(|e| &e.1 == r)
                    .map(|i| EdgeTypeId(i as u32))
                    .ok_or_else(|| Error::Schema(format!("line {line}: unknown reverse edge type `{r}`")))?,
            ),
        };
        edge_types.push(EdgeType {
            name: name.clone(),
            src: type_id(*line, src)?,
            dst: type_id(*line, dst)?,
            reverse,
        });
    }
    Schema::new(node_types, edge_types)
}

/// Loads and validates a graph from its three text files.
pub fn load_graph(schema_path: &Path, nodes_path: &Path, edges_path: &Path) -> Result<HeteroGraph> {
    let schema = parse_schema_at(&read_text(schema_path)?, schema_path)?;
    let mut b = GraphBuilder::new(schema);

    let nodes = read_text(nodes_path)?;
    for (line, l) in data_lines(&nodes) {
        let perr = |message: String| Error::Parse {
            path: nodes_path.to_path_buf(),
            line,
            message,
        };
        let fields: Vec<&str> = l.split('\t').collect();
        let [ext, ty, feats] = fields.as_slice() else {
            return Err(perr(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let features = if *feats == "-" {
            None
        } else {
            let parsed: std::result::Result<Vec<f64>, _> =
                feats.split(',').map(|x| x.trim().parse::<f64>()).collect();
            Some(parsed.map_err(|e| perr(format!("bad feature value: {e}")))?)
        };
        let t = b
            .schema()
            .node_type_by_name(ty)
            .ok_or_else(|| perr(format!("unknown node type `{ty}`")))?;
        b.add_node(ext, t, features).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}:{line}: {m}", nodes_path.display())),
            other => other,
        })?;
    }

    let edges = read_text(edges_path)?;
    for (line, l) in data_lines(&edges) {
        let fields: Vec<&str> = l.split('\t').collect();
        let [src, dst, ty] = fields.as_slice() else {
            return Err(Error::Parse {
                path: edges_path.to_path_buf(),
                line,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        };
        b.add_edge_named(src, dst, ty).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}:{line}: {m}", edges_path.display())),
            Error::Schema(m) => Error::Schema(format!("{}:{line}: {m}", edges_path.display())),
            other => other,
        })?;
    }
    b.build()
}

fn nodes_text(g: &HeteroGraph) -> String {
    let mut s = String::new();
    for v in 0..g.node_count() {
        let v = NodeId(v as u32);
        let t = g.node_type(v);
        let feats = match g.features().get(t) {
            TypeFeatures::Featureless => "-".to_string(),
            TypeFeatures::Dense { dim, data } => {
                let row = g.local_index(v);
                data[row * dim..(row + 1) * dim]
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        writeln!(s, "{}\t{}\t{}", g.ext_id(v), g.schema().node_type_name(t), feats).unwrap();
    }
    s
}

fn edges_text(g: &HeteroGraph) -> String {
    let mut s = String::new();
    for (r, et) in g.schema().edge_types().iter().enumerate() {
        for (u, w) in g.edges_of_type(EdgeTypeId(r as u32)) {
            writeln!(s, "{}\t{}\t{}", g.ext_id(u), g.ext_id(w), et.name).unwrap();
        }
    }
    s
}

/// Writes the graph in the canonical text formats read by [`load_graph`].
pub fn write_graph(g: &HeteroGraph, schema_path: &Path, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    fs::write(schema_path, g.schema().to_text()).map_err(|e| Error::io(schema_path, e))?;
    fs::write(nodes_path, nodes_text(g)).map_err(|e| Error::io(nodes_path, e))?;
    fs::write(edges_path, edges_text(g)).map_err(|e| Error::io(edges_path, e))?;
    Ok(())
}
