use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{parse_schema, write_graph, EdgeTypeId, GraphBuilder, HeteroGraph, NodeId, NodeTypeId};
use crate::train::{LpSplits, NcSplits};

const NC_SCHEMA: &str = "\
nodetype A
nodetype P
nodetype V
edgetype writes A P rev=writes_rev
edgetype writes_rev P A rev=writes
edgetype publishes P V rev=publishes_rev
edgetype publishes_rev V P rev=publishes
";

const LP_SCHEMA: &str = "\
nodetype user
nodetype item
nodetype tag
edgetype interacts user item rev=interacted_by
edgetype interacted_by item user rev=interacts
edgetype tagged item tag rev=tags
edgetype tags tag item rev=tagged
";

#[derive(Clone, Debug, PartialEq)]
pub struct NcParams {
    pub nodes_per_type: usize,
    pub num_classes: usize,
    /// Distance of the class means of P features from the origin along
    /// their class axis; 0 removes all class information.
    pub signal: f64,
    pub noise_sigma: f64,
    pub links_per_author: usize,
    /// Chance that an author's paper link stays inside its own class.
    pub own_class_prob: f64,
    pub noise_dims: usize,
}

impl NcParams {
    pub fn new(nodes_per_type: usize, num_classes: usize) -> Self {
        NcParams {
            nodes_per_type,
            num_classes,
            signal: 1.0,
            noise_sigma: 0.5,
            links_per_author: 6,
            own_class_prob: 0.9,
            noise_dims: 2,
        }
    }
}

/// Node classification fixture: authors (A) take the class of most of the
/// papers (P) they write; paper features are noisy class indicators.
/// Venues (V) are featureless and carry no signal.
#[derive(Clone, Debug)]
pub struct PlantedNc {
    pub graph: HeteroGraph,
    pub target_type: NodeTypeId,
    /// Class of every author, by local index.
    pub labels: Vec<usize>,
    pub splits: NcSplits,
}

pub fn make_planted_nc_dataset(seed: u64, nodes_per_type: usize, num_classes: usize) -> Result<PlantedNc> {
    make_planted_nc_dataset_with(seed, &NcParams::new(nodes_per_type, num_classes))
}

pub fn make_planted_nc_dataset_with(seed: u64, p: &NcParams) -> Result<PlantedNc> {
    let n = p.nodes_per_type;
    let c = p.num_classes;
    if n < 10 || c < 2 || n < c || p.links_per_author == 0 {
        return Err(Error::Usage("planted classification needs >= 10 nodes per type, >= 2 classes".into()));
    }
    if !(0.0..=1.0).contains(&p.own_class_prob) || p.noise_sigma < 0.0 {
        return Err(Error::Usage("own_class_prob must be in [0, 1] and noise_sigma >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::Usage(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut b = GraphBuilder::new(parse_schema(NC_SCHEMA)?);
    let author_class: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let paper_class: Vec<usize> = (0..n).map(|i| i % c).collect();
    for i in 0..n {
        let x = (0..4).map(|_| unit.sample(&mut rng)).collect();
        b.add_node_named(&format!("a{i}"), "A", Some(x))?;
    }
    for (i, &k) in paper_class.iter().enumerate() {
        let x = (0..c + p.noise_dims)
            .map(|d| if d == k { p.signal } else { 0.0 } + noise.sample(&mut rng))
            .collect();
        b.add_node_named(&format!("p{i}"), "P", Some(x))?;
    }
    for i in 0..n {
        b.add_node_named(&format!("v{i}"), "V", None)?;
    }

    let by_class: Vec<Vec<usize>> = (0..c).map(|k| (0..n).filter(|&i| paper_class[i] == k).collect()).collect();
    let links = p.links_per_author.min(n);
    for (a, &k) in author_class.iter().enumerate() {
        let mut chosen = HashSet::new();
        let mut attempts = 0;
        while chosen.len() < links && attempts < 100 * links {
            attempts += 1;
            let paper = if rng.random::<f64>() < p.own_class_prob {
                by_class[k][rng.random_range(0..by_class[k].len())]
            } else {
                rng.random_range(0..n)
            };
            if chosen.insert(paper) {
                b.add_edge_named(&format!("a{a}"), &format!("p{paper}"), "writes")?;
                b.add_edge_named(&format!("p{paper}"), &format!("a{a}"), "writes_rev")?;
            }
        }
    }
    for paper in 0..n {
        let v = rng.random_range(0..n);
        b.add_edge_named(&format!("p{paper}"), &format!("v{v}"), "publishes")?;
        b.add_edge_named(&format!("v{v}"), &format!("p{paper}"), "publishes_rev")?;
    }
    let graph = b.build()?;
    let target_type = NodeTypeId(0);

    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng);
    let n_train = (n / 10).max(1);
    let n_valid = (n / 10).max(1);
    let labeled = |ids: &[u32]| -> Vec<(u32, usize)> {
        let mut v: Vec<(u32, usize)> = ids.iter().map(|&i| (i, author_class[i as usize])).collect();
        v.sort_unstable();
        v
    };
    let splits = NcSplits {
        target_type,
        num_classes: c,
        train: labeled(&order[..n_train]),
        valid: labeled(&order[n_train..n_train + n_valid]),
        test: labeled(&order[n_train + n_valid..]),
    };
    Ok(PlantedNc {
        graph,
        target_type,
        labels: author_class,
        splits,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpParams {
    pub block_count: usize,
    pub nodes_per_block: usize,
    pub intra_prob: f64,
    pub inter_prob: f64,
    pub tags_per_block: usize,
    pub tags_per_item: usize,
}

impl LpParams {
    pub fn new(block_count: usize, nodes_per_block: usize) -> Self {
        LpParams {
            block_count,
            nodes_per_block,
            intra_prob: 0.3,
            inter_prob: 0.01,
            tags_per_block: 3,
            tags_per_item: 2,
        }
    }
}

/// Link prediction fixture: users and items split into blocks, with
/// user-item edges far likelier inside a block; items also link to tags of
/// their own block.
#[derive(Clone, Debug)]
pub struct PlantedLp {
    pub graph: HeteroGraph,
    pub relation: EdgeTypeId,
    pub splits: LpSplits,
    pub user_block: Vec<usize>,
    pub item_block: Vec<usize>,
}

pub fn make_planted_lp_dataset(seed: u64, block_count: usize, nodes_per_block: usize) -> Result<PlantedLp> {
    make_planted_lp_dataset_with(seed, &LpParams::new(block_count, nodes_per_block))
}

pub fn make_planted_lp_dataset_with(seed: u64, p: &LpParams) -> Result<PlantedLp> {
    if p.block_count == 0 || p.nodes_per_block == 0 || p.tags_per_block == 0 {
        return Err(Error::Usage("planted link prediction needs positive sizes".into()));
    }
    if !(0.0..=1.0).contains(&p.intra_prob) || !(0.0..=1.0).contains(&p.inter_prob) {
        return Err(Error::Usage("edge probabilities must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.block_count * p.nodes_per_block;
    let user_block: Vec<usize> = (0..n).map(|i| i / p.nodes_per_block).collect();
    let item_block = user_block.clone();

    let mut b = GraphBuilder::new(parse_schema(LP_SCHEMA)?);
    for i in 0..n {
        b.add_node_named(&format!("u{i}"), "user", None)?;
    }
    for i in 0..n {
        b.add_node_named(&format!("i{i}"), "item", None)?;
    }
    for t in 0..p.block_count * p.tags_per_block {
        b.add_node_named(&format!("t{t}"), "tag", None)?;
    }

    let mut positives = Vec::new();
    for u in 0..n {
        for v in 0..n {
            let prob = if user_block[u] == item_block[v] {
                p.intra_prob
            } else {
                p.inter_prob
            };
            if rng.random::<f64>() < prob {
                positives.push((u as u32, v as u32));
                b.add_edge_named(&format!("u{u}"), &format!("i{v}"), "interacts")?;
                b.add_edge_named(&format!("i{v}"), &format!("u{u}"), "interacted_by")?;
            }
        }
    }
    let per_item = p.tags_per_item.min(p.tags_per_block);
    for (v, &blk) in item_block.iter().enumerate() {
        let mut pool: Vec<usize> = (0..p.tags_per_block).map(|k| blk * p.tags_per_block + k).collect();
        pool.shuffle(&mut rng);
        for &t in &pool[..per_item] {
            b.add_edge_named(&format!("i{v}"), &format!("t{t}"), "tagged")?;
            b.add_edge_named(&format!("t{t}"), &format!("i{v}"), "tags")?;
        }
    }
    let graph = b.build()?;
    let relation = graph.schema().edge_type_by_name("interacts").expect("declared above");

    if positives.len() < 10 {
        return Err(Error::Usage(format!("only {} target edges were drawn; enlarge the dataset", positives.len())));
    }
    let known: HashSet<(u32, u32)> = positives.iter().copied().collect();
    positives.shuffle(&mut rng);
    let n_train = positives.len() * 7 / 10;
    let n_valid = positives.len() / 10;
    let mut train = positives[..n_train].to_vec();
    let mut valid = positives[n_train..n_train + n_valid].to_vec();
    let mut test = positives[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    let mut negatives_for = |pos: &[(u32, u32)]| -> Vec<(u32, u32)> {
        pos.iter()
            .map(|&(u, _)| {
                let mut v = rng.random_range(0..n as u32);
                for _ in 0..100 {
                    if !known.contains(&(u, v)) {
                        break;
                    }
                    v = rng.random_range(0..n as u32);
                }
                (u, v)
            })
            .collect()
    };
    let valid_negatives = negatives_for(&valid);
    let test_negatives = negatives_for(&test);
    Ok(PlantedLp {
        graph,
        relation,
        splits: LpSplits {
            relation,
            train,
            valid,
            test,
            valid_negatives,
            test_negatives,
        },
        user_block,
        item_block,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ext(g: &HeteroGraph, t: NodeTypeId, local: u32) -> &str {
    g.ext_id(NodeId(g.type_offset(t) as u32 + local))
}

/// Writes `schema.txt`, `nodes.tsv`, `edges.tsv`, `labels.tsv` and
/// `splits.tsv` into `dir`.
pub fn write_nc_dataset(dir: &Path, d: &PlantedNc) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &d.graph;
    write_graph(g, &dir.join("schema.txt"), &dir.join("nodes.tsv"), &dir.join("edges.tsv"))?;
    let mut labels = String::new();
    for (i, &c) in d.labels.iter().enumerate() {
        let _ = writeln!(labels, "{}\t{c}", ext(g, d.target_type, i as u32));
    }
    write(&dir.join("labels.tsv"), &labels)?;
    let mut splits = String::new();
    for (name, part) in [("train", &d.splits.train), ("valid", &d.splits.valid), ("test", &d.splits.test)] {
        for (i, _) in part {
            let _ = writeln!(splits, "{}\t{name}", ext(g, d.target_type, *i));
        }
    }
    write(&dir.join("splits.tsv"), &splits)
}

/// Writes the graph files plus `target_{train,valid,test}.tsv` and
/// `negatives_{valid,test}.tsv` into `dir`. `edges.tsv` holds every target
/// edge; held-out ones are removed at training time.
pub fn write_lp_dataset(dir: &Path, d: &PlantedLp) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &d.graph;
    write_graph(g, &dir.join("schema.txt"), &dir.join("nodes.tsv"), &dir.join("edges.tsv"))?;
    let et = g.schema().edge_type(d.relation);
    let pairs = |list: &[(u32, u32)]| {
        let mut s = String::new();
        for &(u, v) in list {
            let _ = writeln!(s, "{}\t{}", ext(g, et.src, u), ext(g, et.dst, v));
        }
        s
    };
    let s = &d.splits;
    write(&dir.join("target_train.tsv"), &pairs(&s.train))?;
    write(&dir.join("target_valid.tsv"), &pairs(&s.valid))?;
    write(&dir.join("target_test.tsv"), &pairs(&s.test))?;
    write(&dir.join("negatives_valid.tsv"), &pairs(&s.valid_negatives))?;
    write(&dir.join("negatives_test.tsv"), &pairs(&s.test_negatives))
}

/// Mean raw feature vector of each author's papers (zeros when it wrote
/// none), by author local index.
pub fn author_context_means(d: &PlantedNc) -> Vec<Vec<f64>> {
    let g = &d.graph;
    let writes = g.schema().edge_type_by_name("writes").expect("fixture schema");
    let dim = g.features().per_type[1].dim().unwrap_or(0);
    let crate::graph::TypeFeatures::Dense { data, .. } = g.features().get(NodeTypeId(1)) else {
        return vec![vec![0.0; dim]; g.type_count(d.target_type)];
    };
    g.nodes_of_type(d.target_type)
        .map(|a| {
            let papers = g.neighbors(NodeId(a), writes).expect("author node");
            let mut mean = vec![0.0; dim];
            for &p in papers {
                let j = g.local_index(p);
                for (m, x) in mean.iter_mut().zip(&data[j * dim..(j + 1) * dim]) {
                    *m += x;
                }
            }
            if !papers.is_empty() {
                mean.iter_mut().for_each(|m| *m /= papers.len() as f64);
            }
            mean
        })
        .collect()
}

/// Test micro-F1 of multinomial logistic regression trained on the
/// author context means of the train split.
pub fn oracle_nc_micro_f1(d: &PlantedNc) -> Result<f64> {
    let x = author_context_means(d);
    let c = d.splits.num_classes;
    let dim = x.first().map_or(0, Vec::len) + 1;
    let feats = |i: u32| -> Vec<f64> {
        let mut f = x[i as usize].clone();
        f.push(1.0);
        f
    };
    let mut w = vec![vec![0.0; dim]; c];
    let train = &d.splits.train;
    for _ in 0..2000 {
        let mut grad = vec![vec![0.0; dim]; c];
        for &(i, y) in train {
            let f = feats(i);
            let z: Vec<f64> = w.iter().map(|wk| wk.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            for k in 0..c {
                let p = (z[k] - m).exp() / s - if k == y { 1.0 } else { 0.0 };
                for (gk, fi) in grad[k].iter_mut().zip(&f) {
                    *gk += p * fi / train.len() as f64;
                }
            }
        }
        for (wk, gk) in w.iter_mut().zip(&grad) {
            for (a, b) in wk.iter_mut().zip(gk) {
                *a -= 0.5 * b;
            }
        }
    }
    let pred: Vec<usize> = d
        .splits
        .test
        .iter()
        .map(|&(i, _)| {
            let f = feats(i);
            let z: Vec<f64> = w.iter().map(|wk| wk.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
            let row = crate::tensor::Tensor::new(vec![1, c], z).expect("c logits");
            crate::train::argmax_rows(&row)[0]
        })
        .collect();
    let truth: Vec<usize> = d.splits.test.iter().map(|l| l.1).collect();
    Ok(crate::train::f1_scores(&pred, &truth, c)?.1)
}

/// Test ROC-AUC of the scorer that knows the planted blocks: 1 for a
/// same-block pair, 0 otherwise.
pub fn oracle_lp_auc(d: &PlantedLp) -> Result<f64> {
    let score = |&(u, v): &(u32, u32)| (d.user_block[u as usize] == d.item_block[v as usize]) as u8 as f64;
    let pos: Vec<f64> = d.splits.test.iter().map(score).collect();
    let neg: Vec<f64> = d.splits.test_negatives.iter().map(score).collect();
    crate::train::evaluate_auc(&pos, &neg)
}

/// Test ROC-AUC the block scorer reaches in expectation. Negatives avoid
/// known positives, so a negative lands in the user's block with probability
/// `q = (1 - intra) / ((1 - intra) + (1 - inter)(B - 1))`, and the AUC is
/// `1/2 + (p_in - q) / 2` with `p_in` the share of target edges inside a block.
pub fn block_oracle_expected_auc(p: &LpParams) -> f64 {
    let b = p.block_count as f64;
    let p_in = p.intra_prob / (p.intra_prob + p.inter_prob * (b - 1.0));
    let q = (1.0 - p.intra_prob) / ((1.0 - p.intra_prob) + (1.0 - p.inter_prob) * (b - 1.0));
    0.5 + 0.5 * (p_in - q)
}
