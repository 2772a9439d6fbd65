//! Aggregation-count verification on typed trees and planted synthetic
//! datasets.

mod planted;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::context::{count_aggregations, oracle_enumerate_instances, AggregationStrategy};
use crate::error::{Error, Result};
use crate::graph::{make_typed_tree, tree_down_metapath, NodeId, NodeTypeId};

pub use planted::{
    author_context_means, block_oracle_expected_auc, oracle_lp_auc, oracle_nc_micro_f1, make_planted_lp_dataset, make_planted_lp_dataset_with, make_planted_nc_dataset, make_planted_nc_dataset_with,
    write_lp_dataset, write_nc_dataset, LpParams, NcParams, PlantedLp, PlantedNc,
};

/// Largest tree [`verify_complexity`] will build.
pub const TREE_NODE_GUARD: u64 = 2_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComplexityRow {
    pub n: u64,
    pub k: u64,
    pub count_mn: u64,
    pub count_mc: u64,
    pub count_mi: u64,
    pub formula_mn: u64,
    pub formula_mc: u64,
    pub formula_mi: u64,
    /// Instance count from exhaustive enumeration, times `K + 1`.
    pub oracle_mi: u64,
    pub pass: bool,
}

fn formulas(n: u64, k: u64) -> Option<(u64, u64, u64)> {
    let k32 = u32::try_from(k).ok()?;
    let mn = n.checked_pow(k32)?;
    let mc = (n.checked_pow(k32 + 1)? - 1) / (n - 1);
    let mi = (k + 1).checked_mul(mn)?;
    Some((mn, mc, mi))
}

/// Counts at the root of a regular typed tree with branching `n` and depth
/// `K` under the root-to-leaf metapath, compared with `n^K`,
/// `(n^{K+1} - 1) / (n - 1)` and `(K + 1) n^K`. Rows with `K >= 2` must
/// also satisfy `MN < MC < MI`.
pub fn verify_complexity(n_values: &[u64], k_values: &[u64]) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::new();
    for &n in n_values {
        for &k in k_values {
            if n < 2 || k < 1 {
                return Err(Error::Usage(format!("need n >= 2 and K >= 1, got n = {n}, K = {k}")));
            }
            let (formula_mn, formula_mc, formula_mi) = formulas(n, k)
                .filter(|f| f.1 <= TREE_NODE_GUARD)
                .ok_or_else(|| Error::ResourceGuard(format!("tree for n = {n}, K = {k} exceeds {TREE_NODE_GUARD} nodes")))?;
            let cycle = [NodeTypeId(0), NodeTypeId(1), NodeTypeId(2)];
            let tree = make_typed_tree(n as usize, k as usize, &cycle)?;
            let p = tree_down_metapath(&tree, k as usize)?;
            let root = NodeId(0);
            let count_mn = count_aggregations(&tree, &p, root, AggregationStrategy::Neighbors)?;
            let count_mc = count_aggregations(&tree, &p, root, AggregationStrategy::Context)?;
            let count_mi = count_aggregations(&tree, &p, root, AggregationStrategy::Instances)?;
            let instances = oracle_enumerate_instances(&tree, &p, root, TREE_NODE_GUARD as usize)?;
            let oracle_mi = instances.len() as u64 * (k + 1);
            let exact = count_mn == formula_mn
                && count_mc == formula_mc
                && count_mi == formula_mi
                && oracle_mi == count_mi;
            let ordered = k < 2 || (count_mn < count_mc && count_mc < count_mi);
            rows.push(ComplexityRow {
                n,
                k,
                count_mn,
                count_mc,
                count_mi,
                formula_mn,
                formula_mc,
                formula_mi,
                oracle_mi,
                pass: exact && ordered,
            });
        }
    }
    Ok(rows)
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut out = String::from("n,K,count_MN,count_MC,count_MI,formula_MN,formula_MC,formula_MI,pass\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n, r.k, r.count_mn, r.count_mc, r.count_mi, r.formula_mn, r.formula_mc, r.formula_mi, r.pass
        );
    }
    out
}

pub fn write_complexity_report(path: &Path, rows: &[ComplexityRow]) -> Result<()> {
    std::fs::write(path, complexity_csv(rows)).map_err(|e| Error::io(path, e))
}
