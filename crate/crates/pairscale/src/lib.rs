//! Scale short texts along an abstract concept from pairwise comparisons.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. **Breakdowns** ([`cgcot`]): a fixed chain of prompts turns each text into a
//!    concept-specific description, so that later comparisons judge the concept
//!    rather than surface style.
//! 2. **Matchups** ([`sampler`], [`cgcot`]): a seeded sampler picks a budget of
//!    pairwise matchups; an LLM (or the offline [`simjudge`]) judges which side
//!    of each pair expresses more of the concept.
//! 3. **Scores** ([`bradley_terry`]): a bias-reduced Bradley-Terry fit converts
//!    win/loss/tie records into latent scores with quasi-variance standard
//!    errors, confidence intervals, and a unit-interval rescaling.
//!
//! [`wordfish`] provides a document-term Poisson scaling baseline over the same
//! corpus, and [`eval`] compares any score vector against held-out labels.
//!
//! All record files are JSON Lines (UTF-8, one record per line) so that every
//! intermediate product can be inspected, diffed, and resumed.

pub mod bradley_terry;
pub mod cgcot;
pub mod corpus;
pub mod eval;
pub mod llm;
pub mod porter;
pub mod sampler;
pub mod simjudge;
pub mod wordfish;

/// Stable identifier for a corpus item. Unique within a corpus.
pub type ItemId = String;
