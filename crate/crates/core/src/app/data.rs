//! Loaders for split files.
//!
//! * `labels.tsv`: `<ext_id>\t<class>`
//! * `splits.tsv`: `<ext_id>\t{train|valid|test}`
//! * pair files: `<src_ext_id>\t<dst_ext_id>`

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{load_graph, HeteroGraph, NodeTypeId};
use crate::model::Task;
use crate::train::{LpSplits, NcSplits, SplitSpec};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn two_fields<'a>(path: &Path, line: usize, l: &'a str) -> Result<(&'a str, &'a str)> {
    let f: Vec<&str> = l.split('\t').collect();
    match f.as_slice() {
        [a, b] => Ok((a.trim(), b.trim())),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("expected 2 tab-separated fields, got {}", f.len()),
        }),
    }
}

/// Local index of `ext` within type `t`.
fn local_of(g: &HeteroGraph, t: NodeTypeId, ext: &str, path: &Path, line: usize) -> Result<u32> {
    let v = g
        .node_by_ext(ext)
        .ok_or_else(|| Error::Integrity(format!("{}:{line}: unknown node `{ext}`", path.display())))?;
    if g.node_type(v) != t {
        return Err(Error::Integrity(format!(
            "{}:{line}: node `{ext}` has type `{}`, expected `{}`",
            path.display(),
            g.schema().node_type_name(g.node_type(v)),
            g.schema().node_type_name(t)
        )));
    }
    Ok(g.local_index(v) as u32)
}

pub fn node_type_named(g: &HeteroGraph, name: &str) -> Result<NodeTypeId> {
    g.schema()
        .node_type_by_name(name)
        .ok_or_else(|| Error::Schema(format!("unknown node type `{name}`")))
}

/// Classification splits. `num_classes` defaults to the largest label plus
/// one.
pub fn load_nc_splits(
    g: &HeteroGraph,
    target_type: &str,
    labels_path: &Path,
    splits_path: &Path,
    num_classes: Option<usize>,
) -> Result<NcSplits> {
    let t = node_type_named(g, target_type)?;
    let mut labels: HashMap<u32, usize> = HashMap::new();
    let text = read(labels_path)?;
    for (line, l) in lines(&text) {
        let (ext, c) = two_fields(labels_path, line, l)?;
        let c: usize = c.parse().map_err(|_| Error::Parse {
            path: labels_path.to_path_buf(),
            line,
            message: format!("class `{c}` is not a non-negative integer"),
        })?;
        let v = local_of(g, t, ext, labels_path, line)?;
        if labels.insert(v, c).is_some() {
            return Err(Error::Integrity(format!("{}:{line}: node `{ext}` labeled twice", labels_path.display())));
        }
    }
    let num_classes = match num_classes {
        Some(c) => c,
        None => labels.values().max().map_or(0, |m| m + 1),
    };
    let mut s = NcSplits {
        target_type: t,
        num_classes,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    let text = read(splits_path)?;
    for (line, l) in lines(&text) {
        let (ext, which) = two_fields(splits_path, line, l)?;
        let v = local_of(g, t, ext, splits_path, line)?;
        let label = *labels
            .get(&v)
            .ok_or_else(|| Error::Integrity(format!("{}:{line}: node `{ext}` has no label", splits_path.display())))?;
        let list = match which {
            "train" => &mut s.train,
            "valid" => &mut s.valid,
            "test" => &mut s.test,
            other => {
                return Err(Error::Parse {
                    path: splits_path.to_path_buf(),
                    line,
                    message: format!("split must be train, valid or test, got `{other}`"),
                })
            }
        };
        list.push((v, label));
    }
    Ok(s)
}

/// Pairs of local indices of the relation's endpoint types.
pub fn load_pairs(g: &HeteroGraph, src: NodeTypeId, dst: NodeTypeId, path: &Path) -> Result<Vec<(u32, u32)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (line, l) in lines(&text) {
        let (a, b) = two_fields(path, line, l)?;
        out.push((local_of(g, src, a, path, line)?, local_of(g, dst, b, path, line)?));
    }
    Ok(out)
}

/// The full graph and validated splits a config describes.
pub fn load_dataset(cfg: &RunConfig) -> Result<(HeteroGraph, SplitSpec)> {
    let d = &cfg.data;
    let g = load_graph(&cfg.resolve(&d.schema), &cfg.resolve(&d.nodes), &cfg.resolve(&d.edges))?;
    let splits = match cfg.model.task {
        Task::NodeClassification => SplitSpec::NodeClassification(load_nc_splits(
            &g,
            d.target_type.as_deref().unwrap_or_default(),
            &cfg.required(&d.labels, "labels")?,
            &cfg.required(&d.splits, "splits")?,
            cfg.model.output_dim,
        )?),
        Task::LinkPrediction => {
            let name = d.target_relation.as_deref().unwrap_or_default();
            let relation = g
                .schema()
                .edge_type_by_name(name)
                .ok_or_else(|| Error::Schema(format!("unknown edge type `{name}`")))?;
            let et = g.schema().edge_type(relation);
            let (a, b) = (et.src, et.dst);
            let pairs = |field: &Option<std::path::PathBuf>, key: &str| load_pairs(&g, a, b, &cfg.required(field, key)?);
            SplitSpec::LinkPrediction(LpSplits {
                relation,
                train: pairs(&d.target_train, "target_train")?,
                valid: pairs(&d.target_valid, "target_valid")?,
                test: pairs(&d.target_test, "target_test")?,
                valid_negatives: pairs(&d.negatives_valid, "negatives_valid")?,
                test_negatives: pairs(&d.negatives_test, "negatives_test")?,
            })
        }
    };
    splits.validate(&g)?;
    Ok((g, splits))
}
