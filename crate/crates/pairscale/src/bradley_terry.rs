//! Bias-reduced Bradley-Terry fitting with quasi-variance standard errors.
//!
//! Verdicts accumulate into directed win weights (a tie is half a win each
//! way). The model puts each item's ability λ on the log-odds scale —
//! Pr(i beats j) = σ(λ_i − λ_j) — with the first item as the zero reference,
//! and maximizes the log-likelihood plus the Jeffreys-prior penalty
//! ½·log det I(λ). The penalty is what keeps estimates finite when an item
//! wins or loses everything, where plain maximum likelihood diverges.
//!
//! Because every λ is relative to the reference, per-item standard errors
//! from the covariance matrix only describe contrasts with that one item.
//! [`quasi_variances`] fits per-item numbers q_i such that q_i + q_j
//! approximates var(λ_i − λ_j) for *every* pair, making items directly
//! comparable; the worst approximation error over pairs is reported, never
//! hidden.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cgcot::{Outcome, Verdict};
use crate::ItemId;

// =============================================================================
// Errors
// =============================================================================

#[derive(Debug, thiserror::Error)]
pub enum BtError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("duplicate item id {0}")]
    DuplicateItem(ItemId),
    #[error("verdict references unknown item {0}")]
    UnknownItem(ItemId),
    #[error("verdict pits item {0} against itself")]
    SelfPair(ItemId),
    #[error("invalid win weights: {0}")]
    InvalidWeights(String),
    #[error("comparison graph is disconnected ({})", describe_components(.components))]
    DisconnectedGraph { components: Vec<Vec<ItemId>> },
    #[error("fit did not converge within {iterations} iterations (partial fit available)")]
    NotConverged {
        iterations: usize,
        partial: Box<BTFit>,
    },
    #[error("covariance matrix is not usable: {0}")]
    InvalidCovariance(String),
    #[error("confidence level must be in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn describe_components(components: &[Vec<ItemId>]) -> String {
    let sizes: Vec<String> = components.iter().map(|c| c.len().to_string()).collect();
    format!("{} components of sizes {}", components.len(), sizes.join(", "))
}

// =============================================================================
// Data accumulation
// =============================================================================

/// Directed win weights over an ordered item list. `wins[(i, j)]` is the
/// accumulated weight of i beating j; a tie contributes 0.5 in each
/// direction, so total weight always equals the number of verdicts.
#[derive(Debug, Clone)]
pub struct BTData {
    items: Vec<ItemId>,
    wins: DMatrix<f64>,
}

impl BTData {
    /// Build directly from a win matrix (rows beat columns). Used by tests
    /// and simulation paths that never materialize verdicts.
    pub fn from_win_matrix(items: Vec<ItemId>, wins: DMatrix<f64>) -> Result<Self, BtError> {
        if items.len() < 2 {
            return Err(BtError::TooFewItems(items.len()));
        }
        if wins.nrows() != items.len() || wins.ncols() != items.len() {
            return Err(BtError::InvalidWeights(format!(
                "win matrix is {}x{} for {} items",
                wins.nrows(),
                wins.ncols(),
                items.len()
            )));
        }
        let mut seen = HashMap::new();
        for (pos, id) in items.iter().enumerate() {
            if seen.insert(id.clone(), pos).is_some() {
                return Err(BtError::DuplicateItem(id.clone()));
            }
        }
        for i in 0..items.len() {
            if wins[(i, i)] != 0.0 {
                return Err(BtError::SelfPair(items[i].clone()));
            }
            for j in 0..items.len() {
                let w = wins[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(BtError::InvalidWeights(format!(
                        "weight w[{},{}] = {w}",
                        items[i], items[j]
                    )));
                }
            }
        }
        Ok(BTData { items, wins })
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn wins(&self) -> &DMatrix<f64> {
        &self.wins
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.wins.sum()
    }
}

/// Fold verdicts into win weights. FirstWins adds 1 to w(first, second),
/// SecondWins the reverse, Tie adds 0.5 both ways.
pub fn accumulate(verdicts: &[Verdict], items: &[ItemId]) -> Result<BTData, BtError> {
    let mut data = BTData::from_win_matrix(
        items.to_vec(),
        DMatrix::zeros(items.len(), items.len()),
    )?;
    let index: HashMap<&str, usize> =
        items.iter().enumerate().map(|(pos, id)| (id.as_str(), pos)).collect();
    for v in verdicts {
        let i = *index
            .get(v.first_id.as_str())
            .ok_or_else(|| BtError::UnknownItem(v.first_id.clone()))?;
        let j = *index
            .get(v.second_id.as_str())
            .ok_or_else(|| BtError::UnknownItem(v.second_id.clone()))?;
        if i == j {
            return Err(BtError::SelfPair(v.first_id.clone()));
        }
        match v.outcome {
            Outcome::FirstWins => data.wins[(i, j)] += 1.0,
            Outcome::SecondWins => data.wins[(j, i)] += 1.0,
            Outcome::Tie => {
                data.wins[(i, j)] += 0.5;
                data.wins[(j, i)] += 0.5;
            }
        }
    }
    Ok(data)
}

// =============================================================================
// Numerics
// =============================================================================

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x), stable for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

// =============================================================================
// Fitting
// =============================================================================

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on the largest absolute component of the
    /// penalized score.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-8, max_iter: 200 }
    }
}

/// A fitted model. `lambda` is on the log-odds scale with
/// `lambda[reference] == 0`; `vcov` covers the n−1 non-reference entries in
/// item order; `loglik` is the penalized log-likelihood at the optimum.
#[derive(Debug, Clone)]
pub struct BTFit {
    pub items: Vec<ItemId>,
    pub reference_id: ItemId,
    pub lambda: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BTFit {
    /// Ability α_i = exp(λ_i); derived, never stored.
    pub fn abilities(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l.exp()).collect()
    }

    /// Exact var(λ_i − λ_j) from the covariance matrix, with the reference
    /// treated as a zero row/column.
    pub fn contrast_variance(&self, i: usize, j: usize) -> f64 {
        let m = |a: usize, b: usize| {
            if a == 0 || b == 0 {
                0.0
            } else {
                self.vcov[(a - 1, b - 1)]
            }
        };
        m(i, i) + m(j, j) - 2.0 * m(i, j)
    }
}

/// One evaluation of the penalized problem at a fixed λ: win probabilities,
/// Fisher information on the free parameters (with its Cholesky factor), and
/// both plain and penalized log-likelihoods.
struct Evaluation {
    p: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    penalized: f64,
}

impl Evaluation {
    fn at(data: &BTData, lambda: &DVector<f64>) -> Result<Self, BtError> {
        let n = data.n();
        let w = &data.wins;
        let mut p = DMatrix::zeros(n, n);
        let mut loglik = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = lambda[i] - lambda[j];
                p[(i, j)] = sigmoid(d);
                if w[(i, j)] > 0.0 {
                    loglik += w[(i, j)] * log_sigmoid(d);
                }
            }
        }

        // Fisher information over the free parameters (items 1..n).
        let mut info = DMatrix::zeros(n - 1, n - 1);
        for i in 1..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let n_ij = w[(i, j)] + w[(j, i)];
                let v = p[(i, j)] * p[(j, i)];
                diag += n_ij * v;
                if j >= 1 {
                    info[(i - 1, j - 1)] = -n_ij * v;
                }
            }
            info[(i - 1, i - 1)] = diag;
        }

        let chol = Cholesky::new(info).ok_or_else(|| {
            BtError::Numerical("Fisher information lost positive definiteness".into())
        })?;
        let mut log_det = 0.0;
        let l = chol.l();
        for k in 0..n - 1 {
            log_det += 2.0 * l[(k, k)].ln();
        }
        Ok(Evaluation { p, chol, penalized: loglik + 0.5 * log_det })
    }

    /// Penalized score U* = U + A on the free parameters, where A is the
    /// gradient of ½·log det I. Writing M for I⁻¹ padded with a zero
    /// reference row/column and g_rj = n_rj·v_rj·(1 − 2p_rj), the penalty
    /// gradient collapses to A_r = ½·Σ_{j≠r} g_rj·(M_rr + M_jj − 2M_rj) —
    /// O(n²) once M is in hand.
    fn modified_score(&self, data: &BTData) -> DVector<f64> {
        let n = data.n();
        let w = &data.wins;
        let inv = self.chol.inverse();
        let m = |a: usize, b: usize| {
            if a == 0 || b == 0 {
                0.0
            } else {
                inv[(a - 1, b - 1)]
            }
        };
        let mut ustar = DVector::zeros(n - 1);
        for r in 1..n {
            let mut u = 0.0;
            let mut a = 0.0;
            for j in 0..n {
                if j == r {
                    continue;
                }
                let n_rj = w[(r, j)] + w[(j, r)];
                if n_rj == 0.0 {
                    continue;
                }
                let p_rj = self.p[(r, j)];
                u += w[(r, j)] - n_rj * p_rj;
                let g = n_rj * p_rj * (1.0 - p_rj) * (1.0 - 2.0 * p_rj);
                a += g * (m(r, r) + m(j, j) - 2.0 * m(r, j));
            }
            ustar[r - 1] = u + 0.5 * a;
        }
        ustar
    }
}

/// Connected components of the comparison graph (any positive weight in
/// either direction is an edge).
fn components(data: &BTData) -> Vec<Vec<usize>> {
    let n = data.n();
    let w = &data.wins;
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if assigned[start] {
            continue;
        }
        let mut component = vec![start];
        let mut queue = std::collections::VecDeque::from([start]);
        assigned[start] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !assigned[j] && (w[(i, j)] > 0.0 || w[(j, i)] > 0.0) {
                    assigned[j] = true;
                    component.push(j);
                    queue.push_back(j);
                }
            }
        }
        out.push(component);
    }
    out
}

/// Fit by Fisher scoring on the penalized score. The step length is chosen
/// to shrink the score norm when possible — plain Fisher steps can
/// oscillate without contracting when the penalty's curvature rivals the
/// likelihood's (the two-item separation case hits this exactly) — falling
/// back to any step that does not worsen the penalized objective. Estimates
/// stay finite even under separation thanks to the penalty. A non-converged
/// fit is returned inside [`BtError::NotConverged`] with
/// `converged == false`.
pub fn fit(data: &BTData, options: &FitOptions) -> Result<BTFit, BtError> {
    let n = data.n();
    let comps = components(data);
    if comps.len() > 1 {
        return Err(BtError::DisconnectedGraph {
            components: comps
                .into_iter()
                .map(|c| c.into_iter().map(|i| data.items[i].clone()).collect())
                .collect(),
        });
    }

    let mut lambda = DVector::zeros(n);
    let mut eval = Evaluation::at(data, &lambda)?;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let ustar = eval.modified_score(data);
        if ustar.amax() < options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;

        let delta = eval.chol.solve(&ustar);
        let current_norm = ustar.amax();
        let mut accepted: Option<(DVector<f64>, Evaluation)> = None;
        let mut fallback: Option<(DVector<f64>, Evaluation)> = None;
        let mut t = 1.0;
        for _ in 0..40 {
            let mut trial = lambda.clone();
            for r in 1..n {
                trial[r] += t * delta[r - 1];
            }
            if let Ok(next) = Evaluation::at(data, &trial) {
                if next.modified_score(data).amax() < current_norm {
                    accepted = Some((trial, next));
                    break;
                }
                if fallback.is_none() && next.penalized >= eval.penalized - 1e-10 {
                    fallback = Some((trial, next));
                }
            }
            t *= 0.5;
        }
        match accepted.or(fallback) {
            Some((next_lambda, next_eval)) => {
                lambda = next_lambda;
                eval = next_eval;
            }
            // Nothing along the ray helps even microscopically; stop and
            // report the non-converged state.
            None => break,
        }
    }

    let fit = BTFit {
        items: data.items.clone(),
        reference_id: data.items[0].clone(),
        lambda: lambda.iter().copied().collect(),
        vcov: eval.chol.inverse(),
        loglik: eval.penalized,
        converged,
        iterations,
    };
    if !converged {
        return Err(BtError::NotConverged { iterations, partial: Box::new(fit) });
    }
    Ok(fit)
}

// =============================================================================
// Quasi-variances
// =============================================================================

/// Per-item variance surrogates: q_i + q_j ≈ var(λ_i − λ_j) for all pairs.
#[derive(Debug, Clone)]
pub struct QuasiVariances {
    pub qvar: Vec<f64>,
    pub qse: Vec<f64>,
    /// max over pairs of |(q_i + q_j) / var(λ_i − λ_j) − 1|.
    pub worst_relative_error: f64,
}

/// Minimize Σ_{i<j} [log(q_i + q_j) − log var(λ_i − λ_j)]² over q > 0
/// (Gauss-Newton in u = log q). The two-item case is solved exactly.
pub fn quasi_variances(fit: &BTFit) -> Result<QuasiVariances, BtError> {
    let n = fit.lambda.len();
    let mut exact = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = fit.contrast_variance(i, j);
            if !v.is_finite() || v <= 0.0 {
                return Err(BtError::InvalidCovariance(format!(
                    "contrast variance for ({}, {}) is {v}",
                    fit.items[i], fit.items[j]
                )));
            }
            exact[i * n + j] = v;
        }
    }

    if n == 2 {
        let half = exact[1] / 2.0;
        return Ok(QuasiVariances {
            qvar: vec![half; 2],
            qse: vec![half.sqrt(); 2],
            worst_relative_error: 0.0,
        });
    }

    // Start from q_i = mean_j var(λ_i − λ_j) / 2.
    let mut u = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                sum += exact[i.min(j) * n + i.max(j)];
            }
        }
        u[i] = (sum / (2.0 * (n - 1) as f64)).ln();
    }

    let objective = |u: &[f64]| -> f64 {
        let mut f = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r = (u[i].exp() + u[j].exp()).ln() - exact[i * n + j].ln();
                f += r * r;
            }
        }
        f
    };

    let mut f_current = objective(&u);
    for _ in 0..200 {
        let q: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtr = DVector::<f64>::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                let s = q[i] + q[j];
                let r = s.ln() - exact[i * n + j].ln();
                let (ai, aj) = (q[i] / s, q[j] / s);
                jtj[(i, i)] += ai * ai;
                jtj[(j, j)] += aj * aj;
                jtj[(i, j)] += ai * aj;
                jtj[(j, i)] += ai * aj;
                jtr[i] += ai * r;
                jtr[j] += aj * r;
            }
        }
        for i in 0..n {
            jtj[(i, i)] += 1e-12; // keep the solve well-posed
        }
        let chol = Cholesky::new(jtj)
            .ok_or_else(|| BtError::Numerical("quasi-variance normal equations singular".into()))?;
        let step = chol.solve(&(-jtr));

        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-8 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, d)| x + t * d).collect();
            let f_trial = objective(&trial);
            if f_trial <= f_current {
                let improvement = f_current - f_trial;
                u = trial;
                f_current = f_trial;
                accepted = improvement > 1e-14;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t < 1e-12 {
            break;
        }
    }

    let qvar: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let rel = ((qvar[i] + qvar[j]) / exact[i * n + j] - 1.0).abs();
            worst = worst.max(rel);
        }
    }
    Ok(QuasiVariances {
        qse: qvar.iter().map(|q| q.sqrt()).collect(),
        qvar,
        worst_relative_error: worst,
    })
}

// =============================================================================
// Intervals and scores
// =============================================================================

/// λ_i ± z·qse_i with z the standard-normal quantile for `level`.
pub fn confidence_intervals(
    fit: &BTFit,
    qv: &QuasiVariances,
    level: f64,
) -> Result<Vec<(f64, f64)>, BtError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BtError::InvalidLevel(level));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    Ok(fit
        .lambda
        .iter()
        .zip(&qv.qse)
        .map(|(l, se)| (l - z * se, l + z * se))
        .collect())
}

/// Min-max rescale of λ to [0, 1]; a constant vector maps to all 0.5.
pub fn rescale_unit(fit: &BTFit) -> Vec<f64> {
    let min = fit.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = fit.lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; fit.lambda.len()];
    }
    fit.lambda.iter().map(|l| (l - min) / (max - min)).collect()
}

// =============================================================================
// Output records
// =============================================================================

/// One line of the scale output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledItem {
    pub item_id: ItemId,
    pub lambda: f64,
    pub qse: f64,
    pub score_unit: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Trailing summary record of the scale output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub worst_relative_error: f64,
}

/// Assemble per-item output records from a fit and its derived quantities.
pub fn scaled_items(
    fit: &BTFit,
    qv: &QuasiVariances,
    intervals: &[(f64, f64)],
) -> Vec<ScaledItem> {
    let scores = rescale_unit(fit);
    fit.items
        .iter()
        .enumerate()
        .map(|(i, id)| ScaledItem {
            item_id: id.clone(),
            lambda: fit.lambda[i],
            qse: qv.qse[i],
            score_unit: scores[i],
            ci_low: intervals[i].0,
            ci_high: intervals[i].1,
        })
        .collect()
}
