//! Command implementations behind the `mecch` binary.

mod config;
mod data;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{DataSection, ModelSection, RunConfig, TrainSection};
pub use data::{load_dataset, load_nc_splits, load_pairs, node_type_named};

use crate::bench::{
    make_planted_lp_dataset, make_planted_nc_dataset, verify_complexity, write_complexity_report, write_lp_dataset,
    write_nc_dataset, ComplexityRow,
};
use crate::context::{load_cache, save_cache, ContextStore, SegmentSpec};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::model::{build_store, load_checkpoint, save_checkpoint, store_layout, Model, ModelConfig, Task, Variant};
use crate::train::{evaluate, train, EpochRecord, Metrics, Split, SplitSpec};

/// Environment variable naming the context cache directory.
pub const CACHE_DIR_ENV: &str = "MECCH_CACHE_DIR";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const BENCH_FILE: &str = "complexity_report.csv";

/// Caps the worker pool. Only the first call in a process takes effect.
pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(format!("cannot size the worker pool: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub task: Task,
    pub variant: Variant,
    pub seed: u64,
    pub test: Metrics,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub epochs_run: usize,
    pub seconds: f64,
    pub context_store_bytes: usize,
    pub metapaths: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub task: Task,
    pub variant: Variant,
    pub test: Metrics,
}

fn cache_file(dir: &Path, g: &HeteroGraph, layout: &[Vec<SegmentSpec>]) -> PathBuf {
    let mut h = Sha256::new();
    h.update(g.content_hash());
    for s in layout.iter().flatten() {
        h.update(s.label.as_bytes());
        h.update([0]);
    }
    let hex: String = h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect();
    dir.join(format!("ctx-{hex}.bin"))
}

/// Builds the store, going through the cache directory when one is set.
pub fn obtain_store(g: &HeteroGraph, cfg: &ModelConfig, max_entries: Option<usize>) -> Result<ContextStore> {
    let dir = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()).map(PathBuf::from);
    obtain_store_in(dir.as_deref(), g, cfg, max_entries)
}

pub fn obtain_store_in(dir: Option<&Path>, g: &HeteroGraph, cfg: &ModelConfig, max_entries: Option<usize>) -> Result<ContextStore> {
    let Some(dir) = dir else {
        return build_store(g, cfg, max_entries);
    };
    let layout = store_layout(g, cfg)?;
    let path = cache_file(dir, g, &layout);
    if let Some(store) = load_cache(&path, g, &layout)? {
        info!("loaded contexts from {}", path.display());
        return Ok(store);
    }
    let store = build_store(g, cfg, max_entries)?;
    let saved = fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).and_then(|_| save_cache(&path, g, &store));
    match saved {
        Ok(()) => info!("cached contexts at {}", path.display()),
        Err(e) => warn!("context cache not written: {e}"),
    }
    Ok(store)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,valid_metric,seconds\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.valid_metric, r.seconds);
    }
    s
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("summaries serialize");
    s.push('\n');
    s
}

fn output_dim(cfg: &RunConfig, splits: &SplitSpec) -> usize {
    match splits {
        SplitSpec::NodeClassification(s) => s.num_classes,
        SplitSpec::LinkPrediction(_) => cfg.model.output_dim.unwrap_or(cfg.model.hidden_dim),
    }
}

/// Loads data, builds contexts, trains and writes the checkpoint,
/// `history.csv` and `metrics.json` under `out_dir`. `checkpoint` overrides
/// the checkpoint location.
pub fn cmd_train(config_path: &Path, out_dir: &Path, checkpoint: Option<&Path>, seed: Option<u64>) -> Result<RunSummary> {
    let start = Instant::now();
    let cfg = RunConfig::load(config_path)?.with_seed(seed);
    let (g, splits) = load_dataset(&cfg)?;
    let mp = splits.message_passing_graph(&g);
    let model_cfg = cfg.model_config(output_dim(&cfg, &splits));
    model_cfg.validate()?;
    let store = obtain_store(&mp, &model_cfg, cfg.model.max_context_entries)?;
    let metapaths = store.labels();
    info!("{} context segments, {} bytes", metapaths.len(), store.byte_size());
    let model = Model::new(model_cfg, &mp, &store.layout())?;
    let outcome = train(&mp, &store, model, &splits, &cfg.train_config())?;
    let test = evaluate(&outcome.model, &mp, &store, &splits, Split::Test)?;

    let ckpt_path = checkpoint.map_or_else(|| out_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(&ckpt_path, &outcome.model, &mp)?;
    write_file(&out_dir.join(HISTORY_FILE), history_csv(&outcome.history))?;
    let summary = RunSummary {
        task: cfg.model.task,
        variant: cfg.model.variant,
        seed: cfg.train.seed,
        test,
        best_epoch: outcome.best_epoch,
        best_valid: outcome.best_valid,
        epochs_run: outcome.history.len(),
        seconds: start.elapsed().as_secs_f64(),
        context_store_bytes: store.byte_size(),
        metapaths,
    };
    write_file(&out_dir.join(METRICS_FILE), to_json(&summary))?;
    Ok(summary)
}

/// Data, message-passing graph, store and model for a saved checkpoint.
fn restore(config_path: &Path, checkpoint: &Path) -> Result<(RunConfig, SplitSpec, HeteroGraph, ContextStore, Model)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut cfg = RunConfig::load(config_path)?;
    if ckpt.config.task != cfg.model.task {
        return Err(Error::TaskMismatch(format!(
            "checkpoint was trained for {}, config describes {}",
            ckpt.config.task, cfg.model.task
        )));
    }
    if ckpt.config.task == Task::NodeClassification {
        cfg.model.output_dim = Some(ckpt.config.output_dim);
    }
    let (g, splits) = load_dataset(&cfg)?;
    let mp = splits.message_passing_graph(&g);
    let store = obtain_store(&mp, &ckpt.config, cfg.model.max_context_entries)?;
    let model = Model::from_checkpoint(ckpt, &mp, &store.layout())?;
    Ok((cfg, splits, mp, store, model))
}

/// Test-split metrics of a checkpoint; also written to `out` when given.
pub fn cmd_eval(config_path: &Path, checkpoint: &Path, out: Option<&Path>) -> Result<EvalSummary> {
    let (_, splits, g, store, model) = restore(config_path, checkpoint)?;
    let test = evaluate(&model, &g, &store, &splits, Split::Test)?;
    let summary = EvalSummary {
        task: model.config().task,
        variant: model.config().variant,
        test,
    };
    if let Some(out) = out {
        write_file(out, to_json(&summary))?;
    }
    Ok(summary)
}

/// Writes `<ext_id>\t<type>\t<v1,...,vd>` rows of final-layer outputs for
/// one node type, defaulting to the task's target type. Returns the row
/// count.
pub fn cmd_export_embeddings(config_path: &Path, checkpoint: &Path, out: &Path, node_type: Option<&str>) -> Result<usize> {
    let (_, splits, g, store, model) = restore(config_path, checkpoint)?;
    let t = match node_type {
        Some(name) => node_type_named(&g, name)?,
        None => match &splits {
            SplitSpec::NodeClassification(s) => s.target_type,
            SplitSpec::LinkPrediction(s) => g.schema().edge_type(s.relation).src,
        },
    };
    let h = model.infer(&g, &store)?;
    let name = g.schema().node_type_name(t);
    let mut s = String::new();
    for (i, v) in g.nodes_of_type(t).enumerate() {
        let row: Vec<String> = h[t.index()].row(i).iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "{}\t{name}\t{}", g.ext_id(crate::graph::NodeId(v)), row.join(","));
    }
    write_file(out, s)?;
    Ok(g.type_count(t))
}

/// Runs the complexity grid and writes the CSV report; fails when any row
/// disagrees with its closed form.
pub fn cmd_bench(n_values: &[u64], k_values: &[u64], out: &Path) -> Result<Vec<ComplexityRow>> {
    if n_values.is_empty() || k_values.is_empty() {
        return Err(Error::Usage("need at least one n and one K".into()));
    }
    let rows = verify_complexity(n_values, k_values)?;
    write_complexity_report(out, &rows)?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.pass).map(|r| format!("(n={}, K={})", r.n, r.k)).collect();
    if !failed.is_empty() {
        return Err(Error::Contract(format!("complexity rows failed: {}", failed.join(" "))));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Classification,
    Links,
}

/// Writes a planted dataset plus a ready-to-run `config.toml` into `dir`.
/// `size` is nodes per type (classification) or nodes per block (links);
/// `groups` is the class or block count.
pub fn cmd_generate(kind: DatasetKind, dir: &Path, seed: u64, size: usize, groups: usize) -> Result<PathBuf> {
    let config = match kind {
        DatasetKind::Classification => {
            let d = make_planted_nc_dataset(seed, size, groups)?;
            write_nc_dataset(dir, &d)?;
            format!(
                "[data]\nschema = \"schema.txt\"\nnodes = \"nodes.tsv\"\nedges = \"edges.tsv\"\n\
                 labels = \"labels.tsv\"\nsplits = \"splits.tsv\"\ntarget_type = \"{}\"\n\n\
                 [model]\ntask = \"node_classification\"\nvariant = \"mecch\"\n\n[train]\nseed = {seed}\n",
                d.graph.schema().node_type_name(d.target_type)
            )
        }
        DatasetKind::Links => {
            let d = make_planted_lp_dataset(seed, groups, size)?;
            write_lp_dataset(dir, &d)?;
            format!(
                "[data]\nschema = \"schema.txt\"\nnodes = \"nodes.tsv\"\nedges = \"edges.tsv\"\n\
                 target_relation = \"{}\"\ntarget_train = \"target_train.tsv\"\n\
                 target_valid = \"target_valid.tsv\"\ntarget_test = \"target_test.tsv\"\n\
                 negatives_valid = \"negatives_valid.tsv\"\nnegatives_test = \"negatives_test.tsv\"\n\n\
                 [model]\ntask = \"link_prediction\"\nvariant = \"mecch\"\n\n[train]\nseed = {seed}\n",
                d.graph.schema().edge_type(d.relation).name
            )
        }
    };
    let path = dir.join("config.toml");
    write_file(&path, config)?;
    Ok(path)
}
