//! Agreement between score vectors and human labels.
//!
//! Three small pieces, composable but useful alone: Spearman rank
//! correlation with midranks (label counts are heavily tied, so the naive
//! no-ties formula would be wrong), mean-cutoff binarization of continuous
//! scores, and precision/recall/F1 on the positive class. `evaluate` wires
//! them into a single report against a gold rating vector;
//! `budget_stability` checks how much scores move when the matchup budget
//! changes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("vectors have different lengths ({left} vs {right})")]
    Misaligned { left: usize, right: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("recall undefined: gold labels contain no positives")]
    UndefinedRecall,
}

// =============================================================================
// Rank correlation
// =============================================================================

/// Average ranks, 1-based, ties sharing their midrank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Positions start..=end share the average of ranks start+1 ..= end+1.
        let shared = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = shared;
        }
        start = end + 1;
    }
    ranks
}

/// Pearson correlation, erroring on degenerate input rather than returning
/// NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Misaligned { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(EvalError::UndefinedCorrelation("need at least 2 observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(EvalError::UndefinedCorrelation("constant vector"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Spearman's ρ: Pearson correlation of midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Misaligned { left: x.len(), right: y.len() });
    }
    pearson(&midranks(x), &midranks(y))
}

// =============================================================================
// Binarization and classification metrics
// =============================================================================

/// True iff the score is *strictly* above the mean; a constant vector maps
/// to all-false. (The constant case is handled explicitly: its floating
/// point mean can land a hair below the common value, which would wrongly
/// flip everything positive.)
pub fn binarize_at_mean(scores: &[f64]) -> Vec<bool> {
    if scores.is_empty() {
        return Vec::new();
    }
    if scores.iter().all(|s| *s == scores[0]) {
        return vec![false; scores.len()];
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    scores.iter().map(|s| *s > mean).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

/// Precision, recall, and F1 on the positive class.
///
/// Errors when gold has no positives (recall is undefined); warns and
/// reports precision 0 when nothing was predicted positive.
pub fn prf(pred: &[bool], gold: &[bool]) -> Result<(f64, f64, f64, Confusion), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::Misaligned { left: pred.len(), right: gold.len() });
    }
    if !gold.iter().any(|&g| g) {
        return Err(EvalError::UndefinedRecall);
    }
    let mut c = Confusion { true_pos: 0, false_pos: 0, false_neg: 0, true_neg: 0 };
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    let predicted_pos = c.true_pos + c.false_pos;
    let precision = if predicted_pos == 0 {
        log::warn!("no predicted positives; reporting precision 0");
        0.0
    } else {
        c.true_pos as f64 / predicted_pos as f64
    };
    let recall = c.true_pos as f64 / (c.true_pos + c.false_neg) as f64;
    let f1 =
        if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok((precision, recall, f1, c))
}

// =============================================================================
// Combined report
// =============================================================================

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rho: f64,
    pub n: usize,
    /// Mean score used as the binarization cutoff.
    pub cutoff: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Score vector vs. gold ratings: rank correlation on the raw values, then
/// classification metrics with scores binarized at their mean and gold
/// binarized at `gold_threshold` (a rating at or above it counts positive).
pub fn evaluate(scores: &[f64], gold: &[f64], gold_threshold: f64) -> Result<EvalReport, EvalError> {
    if scores.len() != gold.len() {
        return Err(EvalError::Misaligned { left: scores.len(), right: gold.len() });
    }
    let rho = spearman(scores, gold)?;
    let cutoff = scores.iter().sum::<f64>() / scores.len() as f64;
    let pred = binarize_at_mean(scores);
    let gold_bin: Vec<bool> = gold.iter().map(|g| *g >= gold_threshold).collect();
    let (precision, recall, f1, confusion) = prf(&pred, &gold_bin)?;
    Ok(EvalReport { rho, n: scores.len(), cutoff, precision, recall, f1, confusion })
}

// =============================================================================
// Stability across matchup budgets
// =============================================================================

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetStability {
    pub budgets: Vec<usize>,
    /// Pearson correlations, same ordering as `budgets` on both axes.
    pub matrix: Vec<Vec<f64>>,
}

/// Pairwise Pearson correlations between score vectors produced at
/// different matchup budgets. Symmetric with a unit diagonal.
pub fn budget_stability(
    score_sets: &BTreeMap<usize, Vec<f64>>,
) -> Result<BudgetStability, EvalError> {
    let budgets: Vec<usize> = score_sets.keys().copied().collect();
    let vectors: Vec<&Vec<f64>> = score_sets.values().collect();
    for pair in vectors.windows(2) {
        if pair[0].len() != pair[1].len() {
            return Err(EvalError::Misaligned { left: pair[0].len(), right: pair[1].len() });
        }
    }
    let k = budgets.len();
    let mut matrix = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let r = pearson(vectors[i], vectors[j])?;
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(BudgetStability { budgets, matrix })
}
