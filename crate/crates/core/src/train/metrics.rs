use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `(macro_f1, micro_f1)` of predictions against `truth` over
/// `num_classes` classes. A class with no true positives has F1 = 0.
pub fn f1_scores(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "F1 needs equally many predictions and labels, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if num_classes == 0 || pred.iter().chain(truth).any(|&c| c >= num_classes) {
        return Err(Error::Contract(format!("class index outside [0, {num_classes})")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &y) in pred.iter().zip(truth) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fneg: usize| {
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        }
    };
    let macro_f1 = (0..num_classes).map(|c| f1(tp[c], fp[c], fneg[c])).sum::<f64>() / num_classes as f64;
    let (t, f, n) = (tp.iter().sum(), fp.iter().sum(), fneg.iter().sum());
    Ok((macro_f1, f1(t, f, n)))
}

/// Macro- and micro-F1 of argmax predictions; the class count is the
/// number of logit columns.
pub fn evaluate_f1(logits: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    if !logits.is_matrix() || logits.rows() != labels.len() {
        return Err(Error::Shape(format!("logits {:?} for {} labels", logits.shape(), labels.len())));
    }
    f1_scores(&argmax_rows(logits), labels, logits.cols())
}

/// ROC-AUC as `P(s+ > s-) + P(s+ = s-) / 2`, from average ranks.
pub fn evaluate_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Contract("AUC needs at least one positive and one negative score".into()));
    }
    if pos.iter().chain(neg).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("AUC input holds NaN or Inf".into()));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of 1-based ranks of positives, ties sharing the average rank;
    // kept doubled so it stays an integer.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let doubled_avg = (i + 1 + j + 1) as u128;
        let positives = all[i..=j].iter().filter(|x| x.1).count() as u128;
        doubled_rank_sum += doubled_avg * positives;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    // U = rank_sum - np (np + 1) / 2, doubled
    let doubled_u = doubled_rank_sum - np * (np + 1);
    Ok(doubled_u as f64 / (2 * np * nn) as f64)
}
