//! Losses, negative sampling, optimization and the early-stopped loop.

mod metrics;
mod optim;

use std::collections::HashSet;
use std::time::Instant;

use log::{debug, error, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextStore;
use crate::error::{Error, Result};
use crate::graph::{EdgeTypeId, HeteroGraph, NodeId, NodeTypeId};
use crate::model::{Model, Task};
use crate::tensor::{Tape, Tensor, Var};

pub use metrics::{argmax_rows, evaluate_auc, evaluate_f1, f1_scores};
pub use optim::Adam;

/// Labeled nodes of the target type, as `(local index, class)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NcSplits {
    pub target_type: NodeTypeId,
    pub num_classes: usize,
    pub train: Vec<(u32, usize)>,
    pub valid: Vec<(u32, usize)>,
    pub test: Vec<(u32, usize)>,
}

/// Target-relation edges as `(local source, local destination)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LpSplits {
    pub relation: EdgeTypeId,
    pub train: Vec<(u32, u32)>,
    pub valid: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    pub valid_negatives: Vec<(u32, u32)>,
    pub test_negatives: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    NodeClassification(NcSplits),
    LinkPrediction(LpSplits),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl SplitSpec {
    pub fn task(&self) -> Task {
        match self {
            SplitSpec::NodeClassification(_) => Task::NodeClassification,
            SplitSpec::LinkPrediction(_) => Task::LinkPrediction,
        }
    }

    /// Checks disjointness, label ranges, index ranges and negative counts
    /// against `g`.
    pub fn validate(&self, g: &HeteroGraph) -> Result<()> {
        match self {
            SplitSpec::NodeClassification(s) => {
                let n = g.type_count(s.target_type) as u32;
                let mut seen = HashSet::new();
                for (node, label) in s.train.iter().chain(&s.valid).chain(&s.test) {
                    if *node >= n {
                        return Err(Error::Integrity(format!("labeled node index {node} outside its type")));
                    }
                    if *label >= s.num_classes {
                        return Err(Error::Integrity(format!("label {label} outside [0, {})", s.num_classes)));
                    }
                    if !seen.insert(*node) {
                        let ext = g.ext_id(NodeId(g.type_offset(s.target_type) as u32 + node));
                        return Err(Error::Integrity(format!("node `{ext}` appears in more than one split")));
                    }
                }
                if s.train.is_empty() || s.valid.is_empty() || s.test.is_empty() {
                    return Err(Error::Integrity("train, valid and test splits must be nonempty".into()));
                }
                Ok(())
            }
            SplitSpec::LinkPrediction(s) => {
                let et = g.schema().edge_type(s.relation);
                let (ns, nd) = (g.type_count(et.src) as u32, g.type_count(et.dst) as u32);
                let all = [&s.train, &s.valid, &s.test, &s.valid_negatives, &s.test_negatives];
                if all.iter().flat_map(|v| v.iter()).any(|&(u, v)| u >= ns || v >= nd) {
                    return Err(Error::Integrity("target edge endpoint outside its node type".into()));
                }
                let mut seen = HashSet::new();
                for e in s.train.iter().chain(&s.valid).chain(&s.test) {
                    if !seen.insert(*e) {
                        return Err(Error::Integrity(format!(
                            "target edge ({}, {}) appears twice across splits",
                            g.ext_id(NodeId(g.type_offset(et.src) as u32 + e.0)),
                            g.ext_id(NodeId(g.type_offset(et.dst) as u32 + e.1))
                        )));
                    }
                }
                if s.valid_negatives.len() != s.valid.len() || s.test_negatives.len() != s.test.len() {
                    return Err(Error::Integrity(
                        "evaluation negatives must match the positive counts one to one".into(),
                    ));
                }
                if s.train.is_empty() || s.valid.is_empty() || s.test.is_empty() {
                    return Err(Error::Integrity("train, valid and test splits must be nonempty".into()));
                }
                Ok(())
            }
        }
    }

    /// Graph used for message passing: for link prediction the held-out
    /// target edges (and their reverses) are removed.
    pub fn message_passing_graph(&self, g: &HeteroGraph) -> HeteroGraph {
        match self {
            SplitSpec::NodeClassification(_) => g.clone(),
            SplitSpec::LinkPrediction(s) => {
                let et = g.schema().edge_type(s.relation);
                let (os, od) = (g.type_offset(et.src) as u32, g.type_offset(et.dst) as u32);
                let held: HashSet<(NodeId, NodeId)> = s
                    .valid
                    .iter()
                    .chain(&s.test)
                    .map(|&(u, v)| (NodeId(os + u), NodeId(od + v)))
                    .collect();
                g.without_edges(s.relation, &held)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub negatives_per_positive: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            weight_decay: 0.0,
            max_epochs: 500,
            patience: 50,
            negatives_per_positive: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config("need 0 < patience <= max_epochs".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy over the labeled rows of `logits`.
pub fn nc_loss(tape: &mut Tape, logits: Var, labeled: &[(u32, usize)]) -> Result<Var> {
    let rows = tape.gather_rows(logits, labeled.iter().map(|l| l.0).collect())?;
    let labels: Vec<usize> = labeled.iter().map(|l| l.1).collect();
    tape.softmax_cross_entropy(rows, &labels)
}

/// For each positive `(u, v)`, `per_positive` pairs `(u, v')` with `v'`
/// uniform over the destination type. Accidental true edges are kept.
pub fn sample_negatives<R: Rng + ?Sized>(
    dst_count: usize,
    positives: &[(u32, u32)],
    per_positive: usize,
    rng: &mut R,
) -> Result<Vec<(u32, u32)>> {
    if dst_count == 0 {
        return Err(Error::Contract("cannot sample negatives: destination type has no nodes".into()));
    }
    let mut out = Vec::with_capacity(positives.len() * per_positive);
    for &(u, _) in positives {
        for _ in 0..per_positive {
            out.push((u, rng.random_range(0..dst_count as u32)));
        }
    }
    Ok(out)
}

/// Negative-sampling binary cross-entropy with DistMult scores. Every
/// positive owns the same number of negatives, so the per-positive mean
/// reduces to the mean over all negatives.
pub fn lp_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &[Var],
    src: Var,
    dst: Var,
    positives: &[(u32, u32)],
    negatives: &[(u32, u32)],
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::Contract("link prediction loss needs at least one positive edge".into()));
    }
    if !negatives.len().is_multiple_of(positives.len()) {
        return Err(Error::Contract("each positive needs the same number of negatives".into()));
    }
    let pos = model.score_pairs(tape, bound, src, dst, positives)?;
    let neg = model.score_pairs(tape, bound, src, dst, negatives)?;
    tape.bce_with_logits(pos, neg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
    pub seconds: f64,
}

/// Evaluation-mode metrics on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Classification { macro_f1: f64, micro_f1: f64 },
    LinkPrediction { auc: f64 },
}

impl Metrics {
    /// The model-selection metric: macro-F1 or ROC-AUC.
    pub fn primary(&self) -> f64 {
        match *self {
            Metrics::Classification { macro_f1, .. } => macro_f1,
            Metrics::LinkPrediction { auc } => auc,
        }
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid: f64,
}

/// Endpoint node types of the target relation.
fn lp_types(g: &HeteroGraph, s: &LpSplits) -> (NodeTypeId, NodeTypeId) {
    let et = g.schema().edge_type(s.relation);
    (et.src, et.dst)
}

/// Forward pass plus task loss. `negatives` is required for link
/// prediction.
pub fn task_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &Model,
    bound: &[Var],
    g: &HeteroGraph,
    store: &ContextStore,
    splits: &SplitSpec,
    negatives: &[(u32, u32)],
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let out = model.forward(tape, bound, g, store, training, rng)?;
    match splits {
        SplitSpec::NodeClassification(s) => nc_loss(tape, out.of(s.target_type), &s.train),
        SplitSpec::LinkPrediction(s) => {
            let (a, b) = lp_types(g, s);
            lp_loss(tape, model, bound, out.of(a), out.of(b), &s.train, negatives)
        }
    }
}

/// Metrics of `model` on `split` in evaluation mode.
pub fn evaluate(model: &Model, g: &HeteroGraph, store: &ContextStore, splits: &SplitSpec, split: Split) -> Result<Metrics> {
    let h = model.infer(g, store)?;
    evaluate_outputs(model, &h, g, splits, split)
}

fn evaluate_outputs(model: &Model, h: &[Tensor], g: &HeteroGraph, splits: &SplitSpec, split: Split) -> Result<Metrics> {
    match splits {
        SplitSpec::NodeClassification(s) => {
            let labeled = match split {
                Split::Train => &s.train,
                Split::Valid => &s.valid,
                Split::Test => &s.test,
            };
            let logits = &h[s.target_type.index()];
            let pred = argmax_rows(logits);
            let p: Vec<usize> = labeled.iter().map(|l| pred[l.0 as usize]).collect();
            let y: Vec<usize> = labeled.iter().map(|l| l.1).collect();
            let (macro_f1, micro_f1) = f1_scores(&p, &y, logits.cols())?;
            Ok(Metrics::Classification { macro_f1, micro_f1 })
        }
        SplitSpec::LinkPrediction(s) => {
            let (pos, neg): (&[(u32, u32)], &[(u32, u32)]) = match split {
                Split::Train => return Err(Error::Contract("the train split has no fixed negatives".into())),
                Split::Valid => (&s.valid, &s.valid_negatives),
                Split::Test => (&s.test, &s.test_negatives),
            };
            let (a, b) = lp_types(g, s);
            let w = model
                .params()
                .get("lp.w")
                .ok_or_else(|| Error::Contract("model has no link decoder".into()))?;
            let score = |&(u, v): &(u32, u32)| -> f64 {
                let (hu, hv) = (h[a.index()].row(u as usize), h[b.index()].row(v as usize));
                hu.iter().zip(hv).zip(w.data()).map(|((x, y), w)| x * w * y).sum()
            };
            let sp: Vec<f64> = pos.iter().map(score).collect();
            let sn: Vec<f64> = neg.iter().map(score).collect();
            Ok(Metrics::LinkPrediction {
                auc: evaluate_auc(&sp, &sn)?,
            })
        }
    }
}

/// Full-batch training with early stopping on the validation metric.
pub fn train(
    g: &HeteroGraph,
    store: &ContextStore,
    mut model: Model,
    splits: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    splits.validate(g)?;
    if model.config().task != splits.task() {
        return Err(Error::TaskMismatch(format!(
            "model is configured for {}, splits are for {}",
            model.config().task,
            splits.task()
        )));
    }
    if let SplitSpec::NodeClassification(s) = splits {
        if s.num_classes != model.config().output_dim {
            return Err(Error::Config(format!(
                "{} classes but output_dim {}",
                s.num_classes,
                model.config().output_dim
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    let start = Instant::now();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=cfg.max_epochs {
        let negatives = match splits {
            SplitSpec::LinkPrediction(s) => {
                let dst = lp_types(g, s).1;
                sample_negatives(g.type_count(dst), &s.train, cfg.negatives_per_positive, &mut rng)?
            }
            SplitSpec::NodeClassification(_) => Vec::new(),
        };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let loss = task_loss(&mut tape, &model, bound.vars(), g, store, splits, &negatives, true, &mut rng)
            .map_err(|e| non_finite_context(e, epoch))?;
        let loss_value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let grad_refs: Vec<&Tensor> = bound.vars().iter().map(|v| grads.get(*v)).collect();
        if let Some(i) = grad_refs.iter().position(|g| !g.all_finite()) {
            let name = &model.params().names()[i];
            error!("epoch {epoch}: gradient of `{name}` is not finite (loss {loss_value})");
            return Err(Error::NonFinite(format!("gradient of `{name}` at epoch {epoch}")));
        }
        adam.step(model.params_mut().tensors_mut(), &grad_refs)?;

        let valid = evaluate(&model, g, store, splits, Split::Valid)
            .map_err(|e| non_finite_context(e, epoch))?
            .primary();
        let seconds = start.elapsed().as_secs_f64();
        debug!("epoch {epoch}: loss {loss_value:.6} valid {valid:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss: loss_value,
            valid_metric: valid,
            seconds,
        });
        let improved = best.as_ref().is_none_or(|b| valid > b.1);
        if improved {
            best = Some((epoch, valid, model.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.patience {
            info!("early stop at epoch {epoch}; best epoch {}", best.as_ref().map_or(0, |b| b.0));
            break;
        }
    }
    let (best_epoch, best_valid, model) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_valid,
    })
}

fn non_finite_context(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(msg) => {
            error!("epoch {epoch}: non-finite value ({msg}); aborting");
            Error::NonFinite(format!("epoch {epoch}: {msg}"))
        }
        other => other,
    }
}
