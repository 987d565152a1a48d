//! Wordfish baseline: Poisson scaling of a document-term matrix.
//!
//! Counts are modeled as y_ij ~ Poisson(exp(α_i + ψ_j + β_j·ω_i)) — a doc
//! verbosity effect, a word frequency effect, a word discrimination weight,
//! and the per-doc position ω that is the whole point. Estimation alternates
//! exact 2×2 Newton updates over doc blocks (α_i, ω_i) and word blocks
//! (ψ_j, β_j), each guarded so the log-likelihood never decreases, with the
//! standard identification applied after every sweep: α anchored to the
//! first doc, ω standardized to mean 0 / variance 1, and the (β, ω) sign
//! flipped so a designated anchor pair of documents keeps a fixed order.
//!
//! Preprocessing is deliberately plain: lowercase, strip URLs (before symbol
//! removal, so no `https` fragments survive), drop everything but letters,
//! whitespace-tokenize, Porter-stem.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use regex::Regex;

use crate::porter;
use crate::ItemId;

// =============================================================================
// Errors
// =============================================================================

#[derive(Debug, thiserror::Error)]
pub enum WordfishError {
    #[error("duplicate doc id {0}")]
    DuplicateId(ItemId),
    #[error("invalid trim threshold: {0}")]
    InvalidThreshold(String),
    #[error("trimming removed every term or every document")]
    EmptyAfterTrim,
    #[error("need at least 2 docs and 2 terms to fit, got {docs}x{terms}")]
    TooSmall { docs: usize, terms: usize },
    #[error("matrix has an all-zero {0} — trim before fitting")]
    UntrimmedInput(&'static str),
    #[error("document-term matrix is rank-deficient (all docs proportional); positions are unidentifiable")]
    DegenerateCorpus,
    #[error("anchor pair ({lo}, {hi}) invalid for {n_docs} docs")]
    InvalidAnchor { lo: usize, hi: usize, n_docs: usize },
    #[error("fit did not converge within {iterations} sweeps (partial fit available)")]
    NotConverged {
        iterations: usize,
        partial: Box<WordfishFit>,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

// =============================================================================
// Preprocessing and matrix construction
// =============================================================================

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"https?://\S+|www\.\S+").expect("url regex compiles"))
}

/// Lowercase, strip URLs, drop all non-letter characters, tokenize on
/// whitespace, Porter-stem. Empty input gives an empty list.
pub fn preprocess(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let no_urls = url_regex().replace_all(&lower, " ");
    let letters_only: String = no_urls
        .chars()
        .map(|c| {
            if c.is_ascii_lowercase() || c.is_whitespace() {
                c
            } else if c.is_alphabetic() {
                c // non-ASCII letters survive; the stemmer passes them through
            } else {
                ' '
            }
        })
        .collect();
    letters_only
        .split_whitespace()
        .map(porter::stem)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Docs × stemmed terms count matrix. Vocabulary is sorted, so construction
/// is deterministic and row order mirrors input order.
#[derive(Debug, Clone)]
pub struct DocTermMatrix {
    pub doc_ids: Vec<ItemId>,
    pub vocab: Vec<String>,
    pub counts: DMatrix<f64>,
}

pub fn build_dtm(texts: &[(ItemId, String)]) -> Result<DocTermMatrix, WordfishError> {
    let mut seen = HashSet::new();
    for (id, _) in texts {
        if !seen.insert(id.clone()) {
            return Err(WordfishError::DuplicateId(id.clone()));
        }
    }
    let tokenized: Vec<Vec<String>> = texts.iter().map(|(_, t)| preprocess(t)).collect();
    let mut vocab_set: BTreeMap<String, usize> = BTreeMap::new();
    for tokens in &tokenized {
        for t in tokens {
            let next = vocab_set.len();
            vocab_set.entry(t.clone()).or_insert(next);
        }
    }
    // BTreeMap iteration is sorted; re-number in that order.
    let vocab: Vec<String> = vocab_set.keys().cloned().collect();
    let index: BTreeMap<&str, usize> =
        vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let mut counts = DMatrix::zeros(texts.len(), vocab.len());
    for (row, tokens) in tokenized.iter().enumerate() {
        for t in tokens {
            counts[(row, index[t.as_str()])] += 1.0;
        }
    }
    Ok(DocTermMatrix {
        doc_ids: texts.iter().map(|(id, _)| id.clone()).collect(),
        vocab,
        counts,
    })
}

/// What trimming kept and what it had to drop.
#[derive(Debug, Clone)]
pub struct TrimResult {
    pub dtm: DocTermMatrix,
    pub dropped_doc_ids: Vec<ItemId>,
}

/// Keep terms used at least `min_total` times across at least `min_docs`
/// docs; then drop docs left with no surviving terms.
pub fn trim(
    dtm: &DocTermMatrix,
    min_total: usize,
    min_docs: usize,
) -> Result<TrimResult, WordfishError> {
    if min_total < 1 || min_docs < 1 {
        return Err(WordfishError::InvalidThreshold(format!(
            "min_total={min_total}, min_docs={min_docs}; both must be >= 1"
        )));
    }
    let (n_docs, n_terms) = (dtm.counts.nrows(), dtm.counts.ncols());
    let mut kept_terms = Vec::new();
    for j in 0..n_terms {
        let mut total = 0.0;
        let mut doc_freq = 0usize;
        for i in 0..n_docs {
            let y = dtm.counts[(i, j)];
            total += y;
            if y > 0.0 {
                doc_freq += 1;
            }
        }
        if total >= min_total as f64 && doc_freq >= min_docs {
            kept_terms.push(j);
        }
    }
    if kept_terms.is_empty() {
        return Err(WordfishError::EmptyAfterTrim);
    }

    let mut kept_docs = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..n_docs {
        if kept_terms.iter().any(|&j| dtm.counts[(i, j)] > 0.0) {
            kept_docs.push(i);
        } else {
            dropped.push(dtm.doc_ids[i].clone());
        }
    }
    if kept_docs.is_empty() {
        return Err(WordfishError::EmptyAfterTrim);
    }

    let mut counts = DMatrix::zeros(kept_docs.len(), kept_terms.len());
    for (r, &i) in kept_docs.iter().enumerate() {
        for (c, &j) in kept_terms.iter().enumerate() {
            counts[(r, c)] = dtm.counts[(i, j)];
        }
    }
    Ok(TrimResult {
        dtm: DocTermMatrix {
            doc_ids: kept_docs.iter().map(|&i| dtm.doc_ids[i].clone()).collect(),
            vocab: kept_terms.iter().map(|&j| dtm.vocab[j].clone()).collect(),
            counts,
        },
        dropped_doc_ids: dropped,
    })
}

// =============================================================================
// Fitting
// =============================================================================

#[derive(Debug, Clone)]
pub struct WordfishOptions {
    /// Convergence threshold on the relative log-likelihood change per sweep.
    pub tol: f64,
    pub max_iter: usize,
    /// Doc index pair fixing the sign of ω: ω[anchor.0] < ω[anchor.1].
    /// Defaults to (first doc, last doc).
    pub anchor: Option<(usize, usize)>,
}

impl Default for WordfishOptions {
    fn default() -> Self {
        WordfishOptions { tol: 1e-8, max_iter: 500, anchor: None }
    }
}

/// Fitted positions and nuisance parameters. `loglik` omits the constant
/// −Σ log(y_ij!) term.
#[derive(Debug, Clone)]
pub struct WordfishFit {
    pub doc_ids: Vec<ItemId>,
    pub vocab: Vec<String>,
    pub alpha: Vec<f64>,
    pub psi: Vec<f64>,
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Poisson log-likelihood of a count matrix at the given parameters, up to
/// the constant −Σ log(y!). This is the objective [`fit_wordfish`] climbs;
/// it is public so callers can audit a fit (e.g. finite-difference the
/// gradient) without re-deriving the model.
pub fn loglik_at(y: &DMatrix<f64>, alpha: &[f64], psi: &[f64], beta: &[f64], omega: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            let eta = alpha[i] + psi[j] + beta[j] * omega[i];
            ll += y[(i, j)] * eta - eta.exp();
        }
    }
    ll
}

/// Exact rank-1 test on integer counts: every row a multiple of the first
/// nonzero row. Cross-multiplication keeps it exact (counts are small
/// integers, so the products are far below 2^53).
fn is_rank_deficient(y: &DMatrix<f64>) -> bool {
    let totals: Vec<f64> = (0..y.nrows()).map(|i| y.row(i).sum()).collect();
    let base = match totals.iter().position(|&t| t > 0.0) {
        Some(b) => b,
        None => return true,
    };
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            if y[(i, j)] * totals[base] != y[(base, j)] * totals[i] {
                return false;
            }
        }
    }
    true
}

/// One guarded 2×2 Newton step maximizing a two-parameter slice of the
/// Poisson log-likelihood. `eval` maps the pair to its block log-likelihood,
/// `grad_neg_hess` returns (g1, g2, h11, h12, h22) with h the *negated*
/// Hessian (positive semi-definite).
fn newton2<F, G>(x: (f64, f64), eval: F, grad_neg_hess: G) -> (f64, f64)
where
    F: Fn((f64, f64)) -> f64,
    G: Fn((f64, f64)) -> (f64, f64, f64, f64, f64),
{
    let (g1, g2, mut h11, h12, mut h22) = grad_neg_hess(x);
    let mut det = h11 * h22 - h12 * h12;
    if det <= 1e-12 * (h11.abs() * h22.abs() + 1.0) {
        h11 += 1e-8;
        h22 += 1e-8;
        det = h11 * h22 - h12 * h12;
        if det <= 0.0 {
            return x;
        }
    }
    let d1 = (h22 * g1 - h12 * g2) / det;
    let d2 = (h11 * g2 - h12 * g1) / det;

    let before = eval(x);
    let mut t = 1.0;
    for _ in 0..30 {
        let trial = (x.0 + t * d1, x.1 + t * d2);
        let after = eval(trial);
        if after.is_finite() && after >= before - 1e-12 {
            return trial;
        }
        t *= 0.5;
    }
    x
}

/// Alternating conditional Newton fit. See the module docs for the update
/// and identification scheme.
pub fn fit_wordfish(
    dtm: &DocTermMatrix,
    options: &WordfishOptions,
) -> Result<WordfishFit, WordfishError> {
    let y = &dtm.counts;
    let (n_docs, n_terms) = (y.nrows(), y.ncols());
    if n_docs < 2 || n_terms < 2 {
        return Err(WordfishError::TooSmall { docs: n_docs, terms: n_terms });
    }
    for i in 0..n_docs {
        if y.row(i).sum() == 0.0 {
            return Err(WordfishError::UntrimmedInput("doc row"));
        }
    }
    for j in 0..n_terms {
        if y.column(j).sum() == 0.0 {
            return Err(WordfishError::UntrimmedInput("term column"));
        }
    }
    if is_rank_deficient(y) {
        return Err(WordfishError::DegenerateCorpus);
    }
    let (anchor_lo, anchor_hi) = options.anchor.unwrap_or((0, n_docs - 1));
    if anchor_lo >= n_docs || anchor_hi >= n_docs || anchor_lo == anchor_hi {
        return Err(WordfishError::InvalidAnchor {
            lo: anchor_lo,
            hi: anchor_hi,
            n_docs,
        });
    }

    // ---- initial values -----------------------------------------------------
    let mut alpha: Vec<f64> = (0..n_docs).map(|i| (y.row(i).sum() / n_terms as f64).ln()).collect();
    let mut psi: Vec<f64> =
        (0..n_terms).map(|j| (y.column(j).sum() / n_docs as f64).ln()).collect();

    // Spectral start: leading singular direction of the double-centered
    // log-count matrix.
    let mut centered = DMatrix::zeros(n_docs, n_terms);
    let logs = y.map(|v| (v + 0.5).ln());
    let grand = logs.sum() / (n_docs * n_terms) as f64;
    let row_means: Vec<f64> = (0..n_docs).map(|i| logs.row(i).sum() / n_terms as f64).collect();
    let col_means: Vec<f64> = (0..n_terms).map(|j| logs.column(j).sum() / n_docs as f64).collect();
    for i in 0..n_docs {
        for j in 0..n_terms {
            centered[(i, j)] = logs[(i, j)] - row_means[i] - col_means[j] + grand;
        }
    }
    let svd = centered.svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let lead = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let sigma1 = svd.singular_values[lead];
    let mut omega: Vec<f64> = (0..n_docs).map(|i| u[(i, lead)]).collect();
    standardize(&mut omega);
    let mut beta: Vec<f64> =
        (0..n_terms).map(|j| sigma1 * v_t[(lead, j)] / (n_docs as f64).sqrt()).collect();

    // ---- alternating sweeps -------------------------------------------------
    let mut loglik = loglik_at(y, &alpha, &psi, &beta, &omega);
    let mut converged = false;
    let mut iterations = 0;
    for sweep in 1..=options.max_iter {
        iterations = sweep;

        for i in 0..n_docs {
            let block = |(a, w): (f64, f64)| {
                let mut ll = 0.0;
                for j in 0..n_terms {
                    let eta = a + psi[j] + beta[j] * w;
                    ll += y[(i, j)] * eta - eta.exp();
                }
                ll
            };
            let gh = |(a, w): (f64, f64)| {
                let (mut g1, mut g2, mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..n_terms {
                    let mu = (a + psi[j] + beta[j] * w).exp();
                    let r = y[(i, j)] - mu;
                    g1 += r;
                    g2 += r * beta[j];
                    h11 += mu;
                    h12 += mu * beta[j];
                    h22 += mu * beta[j] * beta[j];
                }
                (g1, g2, h11, h12, h22)
            };
            let (a, w) = newton2((alpha[i], omega[i]), block, gh);
            alpha[i] = a;
            omega[i] = w;
        }

        for j in 0..n_terms {
            let block = |(p, b): (f64, f64)| {
                let mut ll = 0.0;
                for i in 0..n_docs {
                    let eta = alpha[i] + p + b * omega[i];
                    ll += y[(i, j)] * eta - eta.exp();
                }
                ll
            };
            let gh = |(p, b): (f64, f64)| {
                let (mut g1, mut g2, mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n_docs {
                    let mu = (alpha[i] + p + b * omega[i]).exp();
                    let r = y[(i, j)] - mu;
                    g1 += r;
                    g2 += r * omega[i];
                    h11 += mu;
                    h12 += mu * omega[i];
                    h22 += mu * omega[i] * omega[i];
                }
                (g1, g2, h11, h12, h22)
            };
            let (p, b) = newton2((psi[j], beta[j]), block, gh);
            psi[j] = p;
            beta[j] = b;
        }

        // Identification — each step preserves the likelihood exactly.
        let shift = alpha[0];
        for a in alpha.iter_mut() {
            *a -= shift;
        }
        for p in psi.iter_mut() {
            *p += shift;
        }
        let mean = omega.iter().sum::<f64>() / n_docs as f64;
        let sd =
            (omega.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n_docs as f64).sqrt();
        if sd > 1e-12 {
            for (j, b) in beta.iter_mut().enumerate() {
                psi[j] += *b * mean;
                *b *= sd;
            }
            for w in omega.iter_mut() {
                *w = (*w - mean) / sd;
            }
        }
        if omega[anchor_lo] > omega[anchor_hi] {
            for w in omega.iter_mut() {
                *w = -*w;
            }
            for b in beta.iter_mut() {
                *b = -*b;
            }
        }

        let next = loglik_at(y, &alpha, &psi, &beta, &omega);
        let change = (next - loglik).abs() / (loglik.abs() + 1e-10);
        loglik = next;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    let fit = WordfishFit {
        doc_ids: dtm.doc_ids.clone(),
        vocab: dtm.vocab.clone(),
        alpha,
        psi,
        beta,
        omega,
        loglik,
        converged,
        iterations,
    };
    if !converged {
        return Err(WordfishError::NotConverged { iterations, partial: Box::new(fit) });
    }
    Ok(fit)
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sd > 1e-12 {
        for v in values.iter_mut() {
            *v = (*v - mean) / sd;
        }
    } else {
        for v in values.iter_mut() {
            *v -= mean;
        }
    }
}

/// Positions min-max rescaled to [0, 1]; a constant ω maps to all 0.5.
pub fn wordfish_scores(fit: &WordfishFit) -> Vec<f64> {
    let min = fit.omega.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = fit.omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; fit.omega.len()];
    }
    fit.omega.iter().map(|w| (w - min) / (max - min)).collect()
}
