//! Concept-guided breakdown chains and pairwise comparison judging.
//!
//! A [`PromptChain`] is an ordered list of prompt templates applied to one
//! text as a single growing chat conversation; the answers, concatenated with
//! the original text, form the item's concept-specific [`Breakdown`]. Pairs
//! of breakdowns are then put to the model with a comparison prompt, and the
//! reply is turned into a structured [`Verdict`] — first by the deterministic
//! [`parse_verdict`], then (for verbose replies) by a second LLM call with an
//! extraction prompt, and finally, if both fail, by queueing the matchup for
//! manual review.
//!
//! Prompt chains and comparison/extraction prompts are configuration, not
//! code; the shipped defaults live under `prompts/` and are re-exported in
//! [`defaults`].

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, TextItem};
use crate::llm::{Conversation, LlmClient, LlmError};
use crate::sampler::Matchup;
use crate::ItemId;

/// Placeholder for the item text in chain-step templates.
pub const TEXT_PLACEHOLDER: &str = "{{TEXT}}";
/// Placeholders for the two compared descriptions in comparison templates.
pub const DESC1_PLACEHOLDER: &str = "{{DESC1}}";
pub const DESC2_PLACEHOLDER: &str = "{{DESC2}}";
/// Placeholder for the judge's reply in extraction templates.
pub const REPLY_PLACEHOLDER: &str = "{{REPLY}}";

/// Ready-made prompt assets for the two bundled concepts.
pub mod defaults {
    pub const CHAIN_REPUBLICANS: &str = include_str!("../prompts/chain_republicans.json");
    pub const CHAIN_DEMOCRATS: &str = include_str!("../prompts/chain_democrats.json");
    pub const COMPARISON_REPUBLICANS: &str =
        include_str!("../prompts/comparison_republicans.txt");
    pub const COMPARISON_DEMOCRATS: &str = include_str!("../prompts/comparison_democrats.txt");
    pub const EXTRACTION_REPUBLICANS: &str =
        include_str!("../prompts/extraction_republicans.txt");
    pub const EXTRACTION_DEMOCRATS: &str = include_str!("../prompts/extraction_democrats.txt");
}

// =============================================================================
// Errors
// =============================================================================

#[derive(Debug, thiserror::Error)]
pub enum CgcotError {
    #[error("invalid prompt chain: {0}")]
    ChainInvalid(String),
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("breakdown failed for item {item_id} at step {step}: {source}")]
    BreakdownFailed {
        item_id: ItemId,
        /// 1-based chain step that failed.
        step: usize,
        #[source]
        source: LlmError,
    },
    #[error("comparison failed for matchup ({first_id}, {second_id}): {source}")]
    ComparisonFailed {
        first_id: ItemId,
        second_id: ItemId,
        #[source]
        source: LlmError,
    },
    #[error("verdict extraction failed: {0}")]
    ExtractionFailed(#[source] LlmError),
    #[error("matchup pits item {0} against itself")]
    SelfMatchup(ItemId),
    #[error("breakdowns belong to different concepts: {a} vs {b}")]
    ConceptMismatch { a: String, b: String },
    #[error("matchup references item {0} with no breakdown")]
    MissingBreakdown(ItemId),
    #[error("failed writing an output record: {0}")]
    Sink(#[from] std::io::Error),
}

// =============================================================================
// Prompt chains and breakdowns
// =============================================================================

/// A fixed, ordered sequence of prompts that decomposes one concept. Steps
/// run sequentially in a single conversation, so later steps see all prior
/// questions and answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptChain {
    pub concept: String,
    pub steps: Vec<String>,
}

impl PromptChain {
    pub fn from_json_str(json: &str) -> Result<Self, CgcotError> {
        let chain: PromptChain = serde_json::from_str(json)
            .map_err(|e| CgcotError::ChainInvalid(format!("unparseable chain file: {e}")))?;
        chain.validate()?;
        Ok(chain)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CgcotError> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| {
            CgcotError::ChainInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json_str(&json)
    }

    fn validate(&self) -> Result<(), CgcotError> {
        if self.concept.trim().is_empty() {
            return Err(CgcotError::ChainInvalid("empty concept name".into()));
        }
        if self.steps.is_empty() {
            return Err(CgcotError::ChainInvalid("chain has no steps".into()));
        }
        if let Some(i) = self.steps.iter().position(|s| s.trim().is_empty()) {
            return Err(CgcotError::ChainInvalid(format!("step {} is empty", i + 1)));
        }
        Ok(())
    }
}

/// One item's concept-specific breakdown: the original text plus the chain's
/// answers. `composed` is derived, never stored; it is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Breakdown {
    pub item_id: ItemId,
    pub concept: String,
    pub original_text: String,
    pub answers: Vec<String>,
    #[serde(skip)]
    pub composed: String,
}

impl Breakdown {
    pub fn new(
        item_id: ItemId,
        concept: String,
        original_text: String,
        answers: Vec<String>,
    ) -> Self {
        let composed = Self::compose(&original_text, &answers);
        Breakdown { item_id, concept, original_text, answers, composed }
    }

    /// Deterministic composition: `(0) Original Tweet: <text>` followed by
    /// each answer under a `(k)` label, newline-joined.
    pub fn compose(original_text: &str, answers: &[String]) -> String {
        let mut parts = Vec::with_capacity(answers.len() + 1);
        parts.push(format!("(0) Original Tweet: {original_text}"));
        for (i, answer) in answers.iter().enumerate() {
            parts.push(format!("({}) {}", i + 1, answer));
        }
        parts.join("\n")
    }
}

pub fn save_breakdowns(
    path: impl AsRef<Path>,
    breakdowns: &[Breakdown],
) -> Result<(), CorpusError> {
    corpus::save_records(path, breakdowns)
}

/// Load breakdowns and recompute each `composed` field.
pub fn load_breakdowns(path: impl AsRef<Path>) -> Result<Vec<Breakdown>, CorpusError> {
    let mut breakdowns: Vec<Breakdown> = corpus::load_records(path)?;
    for b in &mut breakdowns {
        b.composed = Breakdown::compose(&b.original_text, &b.answers);
    }
    Ok(breakdowns)
}

/// Run the chain over one item: one client call per step, all steps in a
/// single growing conversation. Nothing is persisted here; a failure at any
/// step drops the partial answers.
pub fn generate_breakdown(
    item: &TextItem,
    chain: &PromptChain,
    client: &LlmClient,
) -> Result<Breakdown, CgcotError> {
    chain.validate()?;
    let mut conversation = Conversation::new();
    let mut answers = Vec::with_capacity(chain.steps.len());
    for (idx, step) in chain.steps.iter().enumerate() {
        let prompt = if step.contains(TEXT_PLACEHOLDER) {
            fill_template(step, &[(TEXT_PLACEHOLDER, &item.text)])
        } else if idx == 0 {
            // The shipped chains never name the text explicitly; the first
            // user message has to carry it.
            format!("Tweet: \"{}\"\n\n{step}", item.text)
        } else {
            step.clone()
        };
        conversation = conversation.user(prompt);
        let answer = client.complete(&conversation).map_err(|source| {
            CgcotError::BreakdownFailed { item_id: item.id.clone(), step: idx + 1, source }
        })?;
        conversation = conversation.assistant(answer.clone());
        answers.push(answer);
    }
    Ok(Breakdown::new(item.id.clone(), chain.concept.clone(), item.text.clone(), answers))
}

// =============================================================================
// Verdicts
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "first")]
    FirstWins,
    #[serde(rename = "second")]
    SecondWins,
    #[serde(rename = "tie")]
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionPath {
    /// The comparison reply itself parsed.
    DirectParse,
    /// A second LLM call with the extraction prompt resolved it.
    LlmExtracted,
    /// A human resolved it offline (merged back from the review queue).
    Manual,
}

/// A judged matchup. `raw_reply` is always the original comparison reply,
/// whatever path produced the outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub first_id: ItemId,
    pub second_id: ItemId,
    pub outcome: Outcome,
    pub extraction_path: ExtractionPath,
    pub raw_reply: String,
}

/// A matchup neither parsing nor extraction could resolve: a verdict minus
/// its outcome. A reviewer adds an `"outcome"` field to the record, after
/// which it deserializes as a [`Verdict`] with the `manual` path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualReviewEntry {
    pub first_id: ItemId,
    pub second_id: ItemId,
    pub extraction_path: ExtractionPath,
    pub raw_reply: String,
}

/// Exactly one of these per input matchup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchupResult {
    Resolved(Verdict),
    Queued(ManualReviewEntry),
}

impl MatchupResult {
    pub fn verdict(&self) -> Option<&Verdict> {
        match self {
            MatchupResult::Resolved(v) => Some(v),
            MatchupResult::Queued(_) => None,
        }
    }
}

// =============================================================================
// Template handling
// =============================================================================

/// Substitute placeholders in one pass; substituted text is never rescanned,
/// so item texts containing placeholder-like strings can't corrupt a prompt.
fn fill_template(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = substitutions
            .iter()
            .filter_map(|(ph, value)| rest.find(ph).map(|pos| (pos, *ph, *value)))
            .min_by_key(|(pos, ..)| *pos);
        match next {
            Some((pos, ph, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + ph.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

fn require_placeholders(template: &str, placeholders: &[&str]) -> Result<(), CgcotError> {
    for ph in placeholders {
        if !template.contains(ph) {
            return Err(CgcotError::Template(format!("template is missing {ph}")));
        }
    }
    Ok(())
}

/// Rewrite a prompt template for raw-text comparisons (no breakdowns): every
/// "Tweet Description" becomes plain "Tweet". Plural first so "Tweet
/// Descriptions" doesn't end up as "Tweets Description".
pub fn raw_text_template(template: &str) -> String {
    template.replace("Tweet Descriptions", "Tweets").replace("Tweet Description", "Tweet")
}

// =============================================================================
// Comparison and parsing
// =============================================================================

/// Put two breakdowns to the judge in the given order and return the raw
/// reply. Order is preserved: `a` becomes description 1.
pub fn compare_pair(
    a: &Breakdown,
    b: &Breakdown,
    comparison_template: &str,
    client: &LlmClient,
) -> Result<String, CgcotError> {
    if a.item_id == b.item_id {
        return Err(CgcotError::SelfMatchup(a.item_id.clone()));
    }
    if a.concept != b.concept {
        return Err(CgcotError::ConceptMismatch { a: a.concept.clone(), b: b.concept.clone() });
    }
    require_placeholders(comparison_template, &[DESC1_PLACEHOLDER, DESC2_PLACEHOLDER])?;
    let prompt = fill_template(
        comparison_template,
        &[(DESC1_PLACEHOLDER, &a.composed), (DESC2_PLACEHOLDER, &b.composed)],
    );
    client.complete(&Conversation::new().user(prompt)).map_err(|source| {
        CgcotError::ComparisonFailed {
            first_id: a.item_id.clone(),
            second_id: b.item_id.clone(),
            source,
        }
    })
}

fn assertion_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // A label ("Tweet Description 1", "Tweet 2", "Description 1"),
        // then an asserting verb within four words, then a comparative
        // within three more — none of it crossing a sentence boundary.
        // Forward-only: a label merely mentioned afterwards ("... compared
        // to Tweet Description 2.") asserts nothing.
        Regex::new(
            r"(?i)\b(?:tweet\s+description|tweet|description)\s+([12])\b(?:[,;:\s]+\w+){0,4}?[,;:\s]+(?:express|show|exhibit|convey|demonstrat)\w*\b(?:[,;:\s]+\w+){0,3}?[,;:\s]+(?:greater|more|stronger)\b",
        )
        .expect("assertion regex compiles")
    })
}

fn tie_signal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\btie\b|\bneither\b|\bboth\s+equally\b|\bequally\s+express")
            .expect("tie regex compiles")
    })
}

/// Deterministic first-pass reply parser. Total: every string maps to
/// `Some(outcome)` or `None` (unparseable — a value, not an error).
///
/// Rules, in order:
/// 1. The whole reply (modulo case, quotes, and trailing punctuation) is one
///    of the constrained forms: a bare label → that side; "Tie"/"Neither" →
///    tie.
/// 2. Exactly one side's label is *asserted* as greater (label, then an
///    express/show/exhibit/convey/demonstrate verb within four words, then
///    greater/more/stronger) → that side. Both sides asserted → unparseable.
/// 3. No assertion but a tie signal ("tie", "neither", "both equally",
///    "equally express...") → tie.
/// 4. Anything else → unparseable.
pub fn parse_verdict(raw: &str) -> Option<Outcome> {
    let normalized = raw
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.' | '!' | ':' | ' '))
        .to_lowercase();
    match normalized.as_str() {
        "tweet description 1" | "tweet 1" | "description 1" => return Some(Outcome::FirstWins),
        "tweet description 2" | "tweet 2" | "description 2" => return Some(Outcome::SecondWins),
        "tie" | "neither" => return Some(Outcome::Tie),
        _ => {}
    }

    let mut first_asserted = false;
    let mut second_asserted = false;
    for caps in assertion_regex().captures_iter(raw) {
        match &caps[1] {
            "1" => first_asserted = true,
            _ => second_asserted = true,
        }
    }
    match (first_asserted, second_asserted) {
        (true, false) => Some(Outcome::FirstWins),
        (false, true) => Some(Outcome::SecondWins),
        (true, true) => None,
        (false, false) => {
            if tie_signal_regex().is_match(raw) {
                Some(Outcome::Tie)
            } else {
                None
            }
        }
    }
}

/// Second pass for verbose replies: hand the raw reply back to the model
/// with the extraction prompt and parse the constrained answer. `None` means
/// even extraction failed and the matchup belongs in the manual queue.
pub fn extract_verdict(
    raw_reply: &str,
    extraction_template: &str,
    client: &LlmClient,
) -> Result<Option<Outcome>, CgcotError> {
    require_placeholders(extraction_template, &[REPLY_PLACEHOLDER])?;
    let prompt = fill_template(extraction_template, &[(REPLY_PLACEHOLDER, raw_reply)]);
    let reply = client
        .complete(&Conversation::new().user(prompt))
        .map_err(CgcotError::ExtractionFailed)?;
    Ok(parse_verdict(&reply))
}

// =============================================================================
// Batch judging
// =============================================================================

/// The two prompt templates a comparison run needs.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonPrompts<'a> {
    pub comparison: &'a str,
    pub extraction: &'a str,
}

/// Optional output sinks: resolved verdicts and the manual-review queue.
/// Records are appended in input order as results complete, so an
/// interrupted run leaves a clean prefix and reruns are byte-identical.
pub struct ComparisonSinks<'a> {
    pub verdicts: &'a mut (dyn Write + Send),
    pub manual_queue: &'a mut (dyn Write + Send),
}

/// Judge every matchup over composed breakdowns. Concurrency is bounded by
/// the client's `max_parallel`; the returned list matches input order, one
/// result per matchup.
pub fn run_comparisons(
    breakdowns: &HashMap<ItemId, Breakdown>,
    matchups: &[Matchup],
    prompts: &ComparisonPrompts,
    client: &LlmClient,
    sinks: Option<ComparisonSinks>,
) -> Result<Vec<MatchupResult>, CgcotError> {
    for m in matchups {
        let a = breakdowns
            .get(&m.first_id)
            .ok_or_else(|| CgcotError::MissingBreakdown(m.first_id.clone()))?;
        let b = breakdowns
            .get(&m.second_id)
            .ok_or_else(|| CgcotError::MissingBreakdown(m.second_id.clone()))?;
        if a.concept != b.concept {
            return Err(CgcotError::ConceptMismatch {
                a: a.concept.clone(),
                b: b.concept.clone(),
            });
        }
    }
    let descriptions: HashMap<&str, &str> = breakdowns
        .iter()
        .map(|(id, b)| (id.as_str(), b.composed.as_str()))
        .collect();
    run_over(&descriptions, matchups, prompts, client, sinks)
}

/// Same as [`run_comparisons`] but over plain item texts — the raw-text
/// baseline. Callers pass templates already rewritten by
/// [`raw_text_template`].
pub fn run_comparisons_texts(
    texts: &HashMap<ItemId, String>,
    matchups: &[Matchup],
    prompts: &ComparisonPrompts,
    client: &LlmClient,
    sinks: Option<ComparisonSinks>,
) -> Result<Vec<MatchupResult>, CgcotError> {
    for m in matchups {
        for id in [&m.first_id, &m.second_id] {
            if !texts.contains_key(id) {
                return Err(CgcotError::MissingBreakdown(id.clone()));
            }
        }
    }
    let descriptions: HashMap<&str, &str> =
        texts.iter().map(|(id, t)| (id.as_str(), t.as_str())).collect();
    run_over(&descriptions, matchups, prompts, client, sinks)
}

struct RunState<'a> {
    /// Results finished but not yet flushed, keyed by matchup index.
    pending: BTreeMap<usize, MatchupResult>,
    next_to_write: usize,
    results: Vec<Option<MatchupResult>>,
    sinks: Option<ComparisonSinks<'a>>,
    error: Option<CgcotError>,
}

fn run_over(
    descriptions: &HashMap<&str, &str>,
    matchups: &[Matchup],
    prompts: &ComparisonPrompts,
    client: &LlmClient,
    sinks: Option<ComparisonSinks>,
) -> Result<Vec<MatchupResult>, CgcotError> {
    require_placeholders(prompts.comparison, &[DESC1_PLACEHOLDER, DESC2_PLACEHOLDER])?;
    require_placeholders(prompts.extraction, &[REPLY_PLACEHOLDER])?;
    for m in matchups {
        if m.first_id == m.second_id {
            return Err(CgcotError::SelfMatchup(m.first_id.clone()));
        }
    }
    if matchups.is_empty() {
        return Ok(Vec::new());
    }

    let state = Mutex::new(RunState {
        pending: BTreeMap::new(),
        next_to_write: 0,
        results: vec![None; matchups.len()],
        sinks,
        error: None,
    });
    let next_index = AtomicUsize::new(0);
    let workers = client.config().max_parallel.clamp(1, matchups.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next_index.fetch_add(1, Ordering::SeqCst);
                if i >= matchups.len() || state.lock().unwrap().error.is_some() {
                    break;
                }
                let outcome = judge_one(descriptions, &matchups[i], prompts, client);
                let mut st = state.lock().unwrap();
                match outcome {
                    Ok(result) => {
                        st.results[i] = Some(result.clone());
                        st.pending.insert(i, result);
                        if let Err(e) = flush_ready(&mut st) {
                            st.error.get_or_insert(e);
                        }
                    }
                    Err(e) => {
                        st.error.get_or_insert(e);
                    }
                }
            });
        }
    });

    let state = state.into_inner().unwrap();
    if let Some(e) = state.error {
        return Err(e);
    }
    Ok(state.results.into_iter().map(|r| r.expect("every matchup judged")).collect())
}

/// Write every result that now forms a contiguous prefix, in input order.
fn flush_ready(st: &mut RunState) -> Result<(), CgcotError> {
    while let Some(result) = st.pending.remove(&st.next_to_write) {
        if let Some(sinks) = st.sinks.as_mut() {
            match &result {
                MatchupResult::Resolved(v) => corpus::append_record(&mut sinks.verdicts, v)?,
                MatchupResult::Queued(q) => corpus::append_record(&mut sinks.manual_queue, q)?,
            }
        }
        st.next_to_write += 1;
    }
    if st.next_to_write == st.results.len() {
        if let Some(sinks) = st.sinks.as_mut() {
            sinks.verdicts.flush()?;
            sinks.manual_queue.flush()?;
        }
    }
    Ok(())
}

fn judge_one(
    descriptions: &HashMap<&str, &str>,
    matchup: &Matchup,
    prompts: &ComparisonPrompts,
    client: &LlmClient,
) -> Result<MatchupResult, CgcotError> {
    let d1 = descriptions[matchup.first_id.as_str()];
    let d2 = descriptions[matchup.second_id.as_str()];
    let prompt =
        fill_template(prompts.comparison, &[(DESC1_PLACEHOLDER, d1), (DESC2_PLACEHOLDER, d2)]);
    let raw_reply =
        client.complete(&Conversation::new().user(prompt)).map_err(|source| {
            CgcotError::ComparisonFailed {
                first_id: matchup.first_id.clone(),
                second_id: matchup.second_id.clone(),
                source,
            }
        })?;

    if let Some(outcome) = parse_verdict(&raw_reply) {
        return Ok(MatchupResult::Resolved(Verdict {
            first_id: matchup.first_id.clone(),
            second_id: matchup.second_id.clone(),
            outcome,
            extraction_path: ExtractionPath::DirectParse,
            raw_reply,
        }));
    }
    match extract_verdict(&raw_reply, prompts.extraction, client)? {
        Some(outcome) => Ok(MatchupResult::Resolved(Verdict {
            first_id: matchup.first_id.clone(),
            second_id: matchup.second_id.clone(),
            outcome,
            extraction_path: ExtractionPath::LlmExtracted,
            raw_reply,
        })),
        None => Ok(MatchupResult::Queued(ManualReviewEntry {
            first_id: matchup.first_id.clone(),
            second_id: matchup.second_id.clone(),
            extraction_path: ExtractionPath::Manual,
            raw_reply,
        })),
    }
}
