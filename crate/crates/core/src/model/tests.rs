use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::context::{build_context, standard_metapath_sets};
use crate::graph::fixtures::{g1, G1_SCHEMA};
use crate::graph::{parse_schema, GraphBuilder, Metapath, NodeId};
use crate::tensor::grad_check;

fn no_dropout_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// G1 with dense features on A and P; V stays featureless.
fn featured_g1(order: &[usize]) -> HeteroGraph {
    let schema = parse_schema(G1_SCHEMA).unwrap();
    let nodes: [(&str, &str, Option<Vec<f64>>); 6] = [
        ("a1", "A", Some(vec![0.5, -1.0, 2.0])),
        ("a2", "A", Some(vec![1.5, 0.25, -0.75])),
        ("p1", "P", Some(vec![1.0, 0.0, -0.5, 0.3])),
        ("p2", "P", Some(vec![-0.2, 0.9, 0.1, 1.1])),
        ("p3", "P", Some(vec![0.7, -0.6, 1.3, 0.0])),
        ("v1", "V", None),
    ];
    let mut b = GraphBuilder::new(schema);
    for &i in order {
        let (id, t, f) = &nodes[i];
        b.add_node_named(id, t, f.clone()).unwrap();
    }
    for (u, w) in [("a1", "p1"), ("a1", "p2"), ("a2", "p2"), ("a2", "p3")] {
        b.add_edge_named(u, w, "writes").unwrap();
        b.add_edge_named(w, u, "writes_rev").unwrap();
    }
    for p in ["p1", "p2", "p3"] {
        b.add_edge_named(p, "v1", "publishes").unwrap();
        b.add_edge_named("v1", p, "publishes_rev").unwrap();
    }
    b.build().unwrap()
}

fn config(variant: Variant, task: Task, d: usize, out: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: d,
        variant,
        seed: 7,
        ..ModelConfig::new(task, out)
    }
}

fn model_and_store(g: &HeteroGraph, cfg: ModelConfig) -> (Model, ContextStore) {
    let store = build_store(g, &cfg, None).unwrap();
    let model = Model::new(cfg, g, &store.layout()).unwrap();
    (model, store)
}

/// Straight-line re-implementation of the forward pass over freshly built
/// contexts; returns `h^L` rows indexed by global node id.
fn dense_oracle(model: &Model, g: &HeteroGraph, sets: &[Vec<Metapath>]) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let p = |name: String| model.params().get(&name).unwrap().clone();
    let names = g.schema().node_type_names().to_vec();
    let mut h: Vec<Vec<f64>> = Vec::new();
    for v in 0..g.node_count() as u32 {
        let v = NodeId(v);
        let t = g.node_type(v);
        let name = &names[t.index()];
        let j = g.local_index(v);
        let row = match g.features().get(t) {
            TypeFeatures::Dense { dim, data } => {
                let w = p(format!("input.{name}.W"));
                let b = p(format!("input.{name}.b"));
                let x = &data[j * dim..(j + 1) * dim];
                (0..cfg.hidden_dim)
                    .map(|o| {
                        let mut s = b.data()[o];
                        for i in 0..*dim {
                            s += w.data()[o * dim + i] * x[i];
                        }
                        s
                    })
                    .collect()
            }
            TypeFeatures::Featureless => p(format!("input.{name}.emb")).row(j).to_vec(),
        };
        h.push(row);
    }
    for l in 1..=cfg.num_layers {
        let width = cfg.layer_width(l);
        let mut next = Vec::new();
        for v in 0..g.node_count() as u32 {
            let v = NodeId(v);
            let t = g.node_type(v);
            let name = &names[t.index()];
            let mut z = vec![0.0; cfg.hidden_dim];
            for mp in &sets[t.index()] {
                let ctx = build_context(g, mp, v).unwrap();
                let a = p(format!("layer{l}.{name}.a.{}", mp.label(g.schema())));
                for k in 0..cfg.hidden_dim {
                    let mean = ctx.node_set.iter().map(|u| h[u.index()][k]).sum::<f64>() / ctx.node_set.len() as f64;
                    z[k] += a.data()[k] * mean;
                }
            }
            let w = p(format!("layer{l}.{name}.W"));
            let b = p(format!("layer{l}.{name}.b"));
            let out: Vec<f64> = (0..width)
                .map(|o| {
                    let s = b.data()[o] + (0..cfg.hidden_dim).map(|k| w.data()[o * cfg.hidden_dim + k] * z[k]).sum::<f64>();
                    if l == cfg.num_layers {
                        s
                    } else {
                        s.max(0.0)
                    }
                })
                .collect();
            next.push(out);
        }
        h = next;
    }
    h
}

fn randomize_fusion(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.params().names().to_vec();
    for name in names {
        if name.contains(".a.") || name.ends_with(".b") {
            for x in model.params_mut().get_mut(&name).unwrap().data_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
    }
}

#[test]
fn forward_matches_dense_oracle() {
    for g in [g1(), featured_g1(&[0, 1, 2, 3, 4, 5])] {
        let cfg = config(Variant::Mecch, Task::NodeClassification, 8, 3);
        let (mut model, store) = model_and_store(&g, cfg);
        randomize_fusion(&mut model, 5);
        let out = model.infer(&g, &store).unwrap();
        let sets = standard_metapath_sets(&g, 2, 64).unwrap();
        let oracle = dense_oracle(&model, &g, &sets);
        for v in 0..g.node_count() as u32 {
            let v = NodeId(v);
            let got = out[g.node_type(v).index()].row(g.local_index(v));
            for (a, b) in got.iter().zip(&oracle[v.index()]) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn uniform_fusion_equals_mmf_bitwise() {
    let g = featured_g1(&[0, 1, 2, 3, 4, 5]);
    let (mecch, store) = model_and_store(&g, config(Variant::Mecch, Task::NodeClassification, 8, 3));
    let (mmf, _) = model_and_store(&g, config(Variant::Mmf, Task::NodeClassification, 8, 3));
    for (name, t) in mmf.params().iter() {
        assert_eq!(mecch.params().get(name).unwrap(), t);
    }
    assert_eq!(mecch.infer(&g, &store).unwrap(), mmf.infer(&g, &store).unwrap());
}

#[test]
fn zero_attention_equals_mecch_exactly() {
    let g = featured_g1(&[0, 1, 2, 3, 4, 5]);
    let (mut mecch, store) = model_and_store(&g, config(Variant::Mecch, Task::NodeClassification, 8, 3));
    randomize_fusion(&mut mecch, 2);
    let (mut ace, _) = model_and_store(&g, config(Variant::Ace, Task::NodeClassification, 8, 3));
    let names: Vec<String> = ace.params().names().to_vec();
    for name in names {
        let slot = ace.params_mut().get_mut(&name).unwrap();
        match mecch.params().get(&name) {
            Some(t) => *slot = t.clone(),
            None => slot.data_mut().fill(0.0),
        }
    }
    assert_eq!(mecch.infer(&g, &store).unwrap(), ace.infer(&g, &store).unwrap());
}

#[test]
fn permutation_equivariance() {
    let g = featured_g1(&[0, 1, 2, 3, 4, 5]);
    let h = featured_g1(&[5, 4, 3, 2, 1, 0]);
    let cfg = config(Variant::Mecch, Task::NodeClassification, 8, 3);
    let (m1, s1) = model_and_store(&g, cfg.clone());
    let (m2, s2) = model_and_store(&h, cfg);
    // featureless V has a single node, so the embedding tables agree too
    assert_eq!(m1.params(), m2.params());
    let o1 = m1.infer(&g, &s1).unwrap();
    let o2 = m2.infer(&h, &s2).unwrap();
    for v in 0..g.node_count() as u32 {
        let v = NodeId(v);
        let w = h.node_by_ext(g.ext_id(v)).unwrap();
        let a = o1[g.node_type(v).index()].row(g.local_index(v));
        let b = o2[h.node_type(w).index()].row(h.local_index(w));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn locality() {
    // two disjoint copies of G1; perturbing one copy leaves the other fixed
    let schema = parse_schema(G1_SCHEMA).unwrap();
    let build = |shift: f64| {
        let mut b = GraphBuilder::new(schema.clone());
        for (c, tag) in ["l", "r"].into_iter().enumerate() {
            let s = if c == 1 { shift } else { 0.0 };
            for i in 0..2 {
                b.add_node_named(&format!("{tag}a{i}"), "A", Some(vec![i as f64 + s, 1.0])).unwrap();
            }
            for i in 0..3 {
                b.add_node_named(&format!("{tag}p{i}"), "P", Some(vec![0.5 * i as f64 - s])).unwrap();
            }
            b.add_node_named(&format!("{tag}v"), "V", Some(vec![1.0, -1.0, s])).unwrap();
            for (a, p) in [(0, 0), (0, 1), (1, 1), (1, 2)] {
                b.add_edge_named(&format!("{tag}a{a}"), &format!("{tag}p{p}"), "writes").unwrap();
                b.add_edge_named(&format!("{tag}p{p}"), &format!("{tag}a{a}"), "writes_rev").unwrap();
            }
            for p in 0..3 {
                b.add_edge_named(&format!("{tag}p{p}"), &format!("{tag}v"), "publishes").unwrap();
                b.add_edge_named(&format!("{tag}v"), &format!("{tag}p{p}"), "publishes_rev").unwrap();
            }
        }
        b.build().unwrap()
    };
    let g = build(0.0);
    let h = build(3.0);
    let cfg = config(Variant::Mecch, Task::NodeClassification, 8, 3);
    let (m, sg) = model_and_store(&g, cfg);
    let sh = build_store(&h, m.config(), None).unwrap();
    let og = m.infer(&g, &sg).unwrap();
    let oh = m.infer(&h, &sh).unwrap();
    let mut changed = false;
    for v in 0..g.node_count() as u32 {
        let v = NodeId(v);
        let (a, b) = (og[g.node_type(v).index()].row(g.local_index(v)), oh[h.node_type(v).index()].row(h.local_index(v)));
        if g.ext_id(v).starts_with('l') {
            assert_eq!(a, b, "{} changed", g.ext_id(v));
        } else {
            changed |= a != b;
        }
    }
    assert!(changed);
}

#[test]
fn preprocess_examples() {
    let g = featured_g1(&[0, 1, 2, 3, 4, 5]);
    let (mut model, _) = model_and_store(&g, config(Variant::Mecch, Task::NodeClassification, 3, 2));
    // identity projection on A (d = d_A = 3), zero bias
    *model.params_mut().get_mut("input.A.W").unwrap() =
        Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    *model.params_mut().get_mut("input.P.b").unwrap() = Tensor::vector(vec![0.1, 0.2, 0.3]);
    *model.params_mut().get_mut("input.P.W").unwrap() = Tensor::zeros(&[3, 4]);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape).unwrap();
    let h = model.preprocess(&mut tape, bound.vars(), &g, false, &mut no_dropout_rng()).unwrap();
    assert_eq!(tape.value(h[0]).row(0), &[0.5, -1.0, 2.0]);
    assert_eq!(tape.value(h[1]).row(2), &[0.1, 0.2, 0.3]);
    assert_eq!(tape.value(h[2]), model.params().get("input.V.emb").unwrap());
}

#[test]
fn encode_context_examples() {
    let g = g1();
    let (_, store) = model_and_store(&g, config(Variant::Mecch, Task::NodeClassification, 2, 2));
    let mut tape = Tape::new();
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let h_all = tape.leaf(Tensor::from_rows(&rows).unwrap()).unwrap();
    let apa = &store.segments(NodeTypeId(0))[0];
    assert_eq!(apa.label, "A-writes-P-writes_rev-A");
    let e = encode_context(&mut tape, h_all, apa).unwrap();
    // a1's context {a1, a2, p1, p2} = rows 0..4
    assert_eq!(tape.value(e).row(0), &[1.5, 3.5]);

    let same = tape.leaf(Tensor::full(&[6, 2], 0.7)).unwrap();
    let e = encode_context(&mut tape, same, apa).unwrap();
    assert!(tape.value(e).data().iter().all(|&x| x == 0.7));

    // an isolated author has the singleton context
    let lone = crate::graph::fixtures::g1_with(|b| {
        b.add_node_named("a3", "A", None).unwrap();
    });
    let (_, store) = model_and_store(&lone, config(Variant::Mecch, Task::NodeClassification, 2, 2));
    let seg = &store.segments(NodeTypeId(0))[0];
    let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, 1.0]).collect();
    let h_all = tape.leaf(Tensor::from_rows(&rows).unwrap()).unwrap();
    let e = encode_context(&mut tape, h_all, seg).unwrap();
    assert_eq!(tape.value(e).row(2), &[2.0, 1.0]);
}

#[test]
fn fuse_examples() {
    let mut tape = Tape::new();
    let id = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
    let zero = tape.constant(Tensor::zeros(&[2])).unwrap();
    let h = tape.leaf(Tensor::from_rows(&[vec![-3.0, 5.0]]).unwrap()).unwrap();
    let ones = tape.constant(Tensor::full(&[2], 1.0)).unwrap();
    let y = fuse(&mut tape, vec![h], vec![ones], id, zero, false).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 5.0]);

    let h1 = tape.leaf(Tensor::from_rows(&[vec![3.0, 5.0]]).unwrap()).unwrap();
    let h2 = tape.leaf(Tensor::from_rows(&[vec![7.0, 9.0]]).unwrap()).unwrap();
    let a1 = tape.leaf(Tensor::vector(vec![1.0, 0.0])).unwrap();
    let a2 = tape.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap();
    let y = fuse(&mut tape, vec![h1, h2], vec![a1, a2], id, zero, true).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 9.0]);
}

#[test]
fn single_isolated_node_one_layer() {
    let schema = parse_schema(G1_SCHEMA).unwrap();
    let mut b = GraphBuilder::new(schema);
    b.add_node_named("a", "A", Some(vec![1.0, -2.0])).unwrap();
    let g = b.build().unwrap();
    let cfg = ModelConfig {
        num_layers: 1,
        ..config(Variant::Mecch, Task::NodeClassification, 2, 2)
    };
    let (mut model, store) = model_and_store(&g, cfg);
    for name in ["input.A.W", "layer1.A.W"] {
        *model.params_mut().get_mut(name).unwrap() = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    }
    // both A metapaths see only the singleton context; fusion sums 2 x 1/2
    let out = model.infer(&g, &store).unwrap();
    assert_eq!(out[0].data(), &[1.0, -2.0]);
}

#[test]
fn distmult_score_is_weighted_dot() {
    let g = g1();
    let (model, _) = model_and_store(&g, config(Variant::Mecch, Task::LinkPrediction, 2, 2));
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape).unwrap();
    let u = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.0]]).unwrap()).unwrap();
    let v = tape.leaf(Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap()).unwrap();
    let s = model.score_pairs(&mut tape, bound.vars(), u, v, &[(0, 0), (1, 1)]).unwrap();
    assert_eq!(tape.value(s).data(), &[11.0, 0.0]);
}

#[test]
fn fallback_identity_metapath_for_sink_type() {
    let schema = parse_schema("nodetype A\nnodetype B\nedgetype ab A B\n").unwrap();
    let mut b = GraphBuilder::new(schema);
    b.add_node_named("a", "A", Some(vec![1.0])).unwrap();
    b.add_node_named("b", "B", Some(vec![2.0])).unwrap();
    b.add_edge_named("a", "b", "ab").unwrap();
    let g = b.build().unwrap();
    let cfg = ModelConfig {
        metapath_length: 1,
        ..config(Variant::Mecch, Task::NodeClassification, 4, 2)
    };
    let (model, store) = model_and_store(&g, cfg);
    assert!(model.params().get("layer1.B.a.B").is_some());
    let out = model.infer(&g, &store).unwrap();
    assert_eq!(out[1].shape(), &[1, 2]);
}

fn loss_for(model: &Model, g: &HeteroGraph, store: &ContextStore, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let out = model.forward(tape, vars, g, store, false, &mut no_dropout_rng())?;
    match model.config().task {
        Task::NodeClassification => tape.softmax_cross_entropy(out.of(NodeTypeId(0)), &[0, 1]),
        Task::LinkPrediction => {
            let (a, p) = (out.of(NodeTypeId(0)), out.of(NodeTypeId(1)));
            let pos = model.score_pairs(tape, vars, a, p, &[(0, 0), (1, 2)])?;
            let neg = model.score_pairs(tape, vars, a, p, &[(0, 2), (1, 0)])?;
            tape.bce_with_logits(pos, neg)
        }
    }
}

#[test]
fn end_to_end_gradients() {
    for g in [g1(), featured_g1(&[0, 1, 2, 3, 4, 5])] {
        for task in [Task::NodeClassification, Task::LinkPrediction] {
            for variant in Variant::ALL {
                let out = if task == Task::LinkPrediction { 4 } else { 2 };
                let (mut model, store) = model_and_store(&g, config(variant, task, 4, out));
                randomize_fusion(&mut model, 3);
                let leaves = model.params().tensors().to_vec();
                let r = grad_check(&leaves, |t, v| loss_for(&model, &g, &store, t, v), 200).unwrap();
                assert!(r.max_rel_error < 1e-4, "{variant} {task}: {r:?}");
            }
        }
    }
}

#[test]
fn checkpoint_roundtrip() {
    let g = featured_g1(&[0, 1, 2, 3, 4, 5]);
    for variant in Variant::ALL {
        let (model, store) = model_and_store(&g, config(variant, Task::LinkPrediction, 4, 4));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, &g).unwrap();
        let back = Model::from_checkpoint(load_checkpoint(&path).unwrap(), &g, &store.layout()).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_checkpoint(&back, &g).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn checkpoint_errors() {
    let g = featured_g1(&[0, 1, 2, 3, 4, 5]);
    let (model, _) = model_and_store(&g, config(Variant::Mecch, Task::NodeClassification, 4, 2));
    let mut bytes = encode_checkpoint(&model, &g).unwrap();
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::CheckpointFormat(_))));
    let ckpt = decode_checkpoint(&bytes).unwrap();
    // different node count for the featureless type
    let other = crate::graph::fixtures::g1_with(|_| {});
    let other_layout = store_layout(&other, model.config()).unwrap();
    assert!(matches!(Model::from_checkpoint(ckpt, &other, &other_layout), Err(Error::Schema(_))));
    bytes[0] = b'X';
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointFormat(_))));
}

#[test]
fn config_validation() {
    assert!(ModelConfig { hidden_dim: 0, ..ModelConfig::new(Task::NodeClassification, 2) }.validate().is_err());
    assert!(ModelConfig { num_layers: 0, ..ModelConfig::new(Task::NodeClassification, 2) }.validate().is_err());
    assert!(ModelConfig { dropout: 1.0, ..ModelConfig::new(Task::NodeClassification, 2) }.validate().is_err());
    assert_eq!("ACE".parse::<Variant>().unwrap(), Variant::Ace);
    assert!("gat".parse::<Variant>().is_err());
}
