//! Chat-completion client with caching, retries, and a concurrency cap.
//!
//! Every completion request is a full [`Conversation`] (optional system
//! message plus alternating user/assistant turns). Replies are cached
//! content-addressed on `(model, temperature, conversation)`, so reruns of a
//! pipeline hit the cache instead of the network and produce byte-identical
//! outputs. The cache is a directory of one JSON file per key, safe for
//! concurrent readers/writers via write-to-temp-then-rename.
//!
//! Backends implement [`ChatBackend`]. [`HttpBackend`] speaks the common
//! chat-completion wire protocol; [`SimulatedBackend`] is a deterministic
//! offline stand-in used throughout the test suite (it scores pairwise
//! comparison prompts position-blindly from a seeded hash of each side's
//! content).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

// =============================================================================
// Conversations
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

/// An ordered chat exchange: optional system message, then turns that must
/// alternate user/assistant and start with user. The client additionally
/// requires the final turn to be a user turn (something to reply to).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_system(system: impl Into<String>) -> Self {
        Conversation { system: Some(system.into()), turns: Vec::new() }
    }

    pub fn user(mut self, content: impl Into<String>) -> Self {
        self.turns.push(Turn { role: Role::User, content: content.into() });
        self
    }

    pub fn assistant(mut self, content: impl Into<String>) -> Self {
        self.turns.push(Turn { role: Role::Assistant, content: content.into() });
        self
    }

    /// Content of the last user turn, if any.
    pub fn last_user(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }

    /// Check the alternation invariant and that there is a trailing user turn
    /// for the model to answer.
    fn validate(&self) -> Result<(), LlmError> {
        if self.turns.is_empty() {
            return Err(LlmError::MalformedConversation("no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(LlmError::MalformedConversation(format!(
                    "turn {i} has role {:?}, expected {:?} (turns must alternate starting with user)",
                    turn.role, expected
                )));
            }
            if turn.content.is_empty() {
                return Err(LlmError::MalformedConversation(format!("turn {i} is empty")));
            }
        }
        if self.turns.last().map(|t| t.role) != Some(Role::User) {
            return Err(LlmError::MalformedConversation(
                "conversation must end with a user turn".into(),
            ));
        }
        Ok(())
    }
}

// =============================================================================
// Errors and backend trait
// =============================================================================

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429/5xx.
    #[error("transient backend error: {0}")]
    Transient(String),
    /// Not worth retrying: bad credentials, malformed request, 4xx.
    #[error("permanent backend error: {0}")]
    Permanent(String),
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("malformed conversation: {0}")]
    MalformedConversation(String),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("backend rejected request: {0}")]
    BackendRejected(String),
    #[error("cache i/o error on {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A chat-completion provider: one conversation in, one assistant message out.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        model: &str,
        temperature: f64,
        conversation: &Conversation,
    ) -> Result<String, BackendError>;
}

// =============================================================================
// Client configuration
// =============================================================================

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub model: String,
    /// Sampling temperature; 0 keeps judgments as reproducible as the
    /// provider allows.
    pub temperature: f64,
    /// Upper bound on concurrent in-flight backend requests.
    pub max_parallel: usize,
    /// Retries after the first attempt; total attempts = max_retries + 1.
    pub max_retries: u32,
    /// Base for exponential backoff between retries (doubles per attempt,
    /// capped at 4s). Tests set this to 0.
    pub backoff_ms: u64,
    /// Directory of cached completions.
    pub cache_dir: PathBuf,
}

impl ClientConfig {
    pub fn new(model: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        ClientConfig {
            model: model.into(),
            temperature: 0.0,
            max_parallel: 4,
            max_retries: 3,
            backoff_ms: 250,
            cache_dir: cache_dir.into(),
        }
    }
}

// =============================================================================
// Client
// =============================================================================

/// Cached, rate-capped chat client. Shareable across threads; enforces
/// `max_parallel` on the backend internally.
pub struct LlmClient {
    config: ClientConfig,
    backend: Box<dyn ChatBackend>,
    limiter: Semaphore,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

/// One cached completion: the full request and the reply it produced.
#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    temperature: f64,
    conversation: Conversation,
    reply: String,
}

impl LlmClient {
    pub fn new(config: ClientConfig, backend: Box<dyn ChatBackend>) -> Result<Self, LlmError> {
        std::fs::create_dir_all(&config.cache_dir).map_err(|source| LlmError::Cache {
            path: config.cache_dir.clone(),
            source,
        })?;
        let limiter = Semaphore::new(config.max_parallel.max(1));
        Ok(LlmClient { config, backend, limiter, backend_calls: AtomicU64::new(0), cache_hits: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Number of actual backend invocations so far (cache hits excluded;
    /// retries count individually).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// Complete `conversation`, consulting the cache first. A fresh reply is
    /// cached before being returned.
    pub fn complete(&self, conversation: &Conversation) -> Result<String, LlmError> {
        conversation.validate()?;
        let key = self.cache_key(conversation);
        let path = self.config.cache_dir.join(format!("{key}.json"));
        if let Some(reply) = self.cache_get(&path) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(reply);
        }

        let reply = {
            let _permit = self.limiter.acquire();
            self.call_with_retries(conversation)?
        };
        if reply.is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        self.cache_put(&path, conversation, &reply)?;
        Ok(reply)
    }

    fn call_with_retries(&self, conversation: &Conversation) -> Result<String, LlmError> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && self.config.backoff_ms > 0 {
                let backoff = self
                    .config
                    .backoff_ms
                    .saturating_mul(1u64 << (attempt - 1).min(16))
                    .min(4_000);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(&self.config.model, self.config.temperature, conversation)
            {
                Ok(reply) => return Ok(reply),
                Err(BackendError::Permanent(msg)) => return Err(LlmError::BackendRejected(msg)),
                Err(BackendError::Transient(msg)) => last = msg,
            }
        }
        Err(LlmError::BackendUnavailable { attempts, last })
    }

    /// Content address of a request: SHA-256 over the canonical JSON of
    /// (model, temperature, full conversation).
    fn cache_key(&self, conversation: &Conversation) -> String {
        #[derive(Serialize)]
        struct KeyMaterial<'a> {
            model: &'a str,
            temperature: f64,
            conversation: &'a Conversation,
        }
        let material = KeyMaterial {
            model: &self.config.model,
            temperature: self.config.temperature,
            conversation,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn cache_get(&self, path: &Path) -> Option<String> {
        let data = std::fs::read(path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&data) {
            Ok(entry) => Some(entry.reply),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn cache_put(
        &self,
        path: &Path,
        conversation: &Conversation,
        reply: &str,
    ) -> Result<(), LlmError> {
        let entry = CacheEntry {
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            conversation: conversation.clone(),
            reply: reply.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let io = |source| LlmError::Cache { path: path.to_path_buf(), source };
        std::fs::write(&tmp, bytes).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

/// Minimal counting semaphore; permits are released on guard drop.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}

// =============================================================================
// HTTP backend
// =============================================================================

/// Environment variable holding the API key for the HTTP backend.
pub const API_KEY_ENV: &str = "PAIRSCALE_API_KEY";

/// Speaks the ubiquitous chat-completion wire protocol: POST a JSON body of
/// `{model, messages: [{role, content}, ...], temperature}` and read the
/// assistant message out of the response.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `endpoint` is the full completion URL. The API key is taken from the
    /// `PAIRSCALE_API_KEY` environment variable when present.
    pub fn new(endpoint: impl Into<String>) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Permanent(format!("http client: {e}")))?;
        Ok(HttpBackend {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            http,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        model: &str,
        temperature: f64,
        conversation: &Conversation,
    ) -> Result<String, BackendError> {
        let mut messages = Vec::with_capacity(conversation.turns.len() + 1);
        if let Some(system) = &conversation.system {
            messages.push(serde_json::json!({"role": "system", "content": system}));
        }
        for turn in &conversation.turns {
            let role = match turn.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(serde_json::json!({"role": role, "content": turn.content}));
        }
        let body = serde_json::json!({
            "model": model,
            "messages": messages,
            "temperature": temperature,
        });

        let mut request = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| BackendError::Transient(format!("request failed: {e}")))?;

        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            let msg = format!("http {status}: {}", body.chars().take(300).collect::<String>());
            return if status.as_u16() == 429 || status.is_server_error() {
                Err(BackendError::Transient(msg))
            } else {
                Err(BackendError::Permanent(msg))
            };
        }

        let value: serde_json::Value = response
            .json()
            .map_err(|e| BackendError::Permanent(format!("unparseable response body: {e}")))?;
        extract_assistant_message(&value)
            .ok_or_else(|| BackendError::Permanent("no assistant message in response".into()))
    }
}

/// Accept the few response shapes providers actually use.
fn extract_assistant_message(value: &serde_json::Value) -> Option<String> {
    let candidates = [
        &value["choices"][0]["message"]["content"],
        &value["message"]["content"],
        &value["content"],
    ];
    candidates
        .into_iter()
        .find_map(|v| v.as_str())
        .map(|s| s.to_string())
}

// =============================================================================
// Simulated backend
// =============================================================================

/// Deterministic offline backend.
///
/// Three behaviors, chosen by what the final user message looks like:
///
/// - **Pairwise comparison** (two labeled description blocks): each side gets
///   a latent score from a seeded hash of its content alone, so the judgment
///   is position-blind by construction; equal content ties. A seeded style
///   draw renders the reply either in the constrained form (`Tweet
///   Description 1` / `Tie.`) or as verbose prose that only the extraction
///   prompt can resolve, at `verbose_rate`; at `hopeless_rate` the reply
///   defeats extraction too and lands in the manual-review queue.
/// - **Extraction** (a previous reply plus "In the above Text..."): reads the
///   first/second/equally cue out of the embedded prose and answers in the
///   constrained form.
/// - **Anything else** (breakdown chain steps): a short synthesized answer,
///   deterministic in the whole conversation.
pub struct SimulatedBackend {
    seed: u64,
    verbose_rate: f64,
    hopeless_rate: f64,
}

impl Default for SimulatedBackend {
    fn default() -> Self {
        SimulatedBackend { seed: 0, verbose_rate: 0.25, hopeless_rate: 0.0 }
    }
}

impl SimulatedBackend {
    pub fn new(seed: u64) -> Self {
        SimulatedBackend { seed, ..Default::default() }
    }

    /// Fraction of comparison replies phrased verbosely (resolved by the
    /// extraction prompt) and fraction left unresolvable even then.
    pub fn with_styles(seed: u64, verbose_rate: f64, hopeless_rate: f64) -> Self {
        SimulatedBackend { seed, verbose_rate, hopeless_rate }
    }

    /// Map arbitrary content to [0, 1), stable across runs and platforms.
    fn unit_hash(&self, salt: &str, content: &str) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(salt.as_bytes());
        hasher.update(content.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn comparison_reply(&self, labels: (&str, &str), desc1: &str, desc2: &str) -> String {
        let s1 = self.unit_hash("score", desc1);
        let s2 = self.unit_hash("score", desc2);
        // Style must not depend on presentation order: salt with the
        // order-independent pair of contents.
        let (lo, hi) = if desc1 <= desc2 { (desc1, desc2) } else { (desc2, desc1) };
        let style = self.unit_hash("style", &format!("{lo}\u{1f}{hi}"));

        if style < self.hopeless_rate {
            return "It is difficult to weigh these remarks against each other.".into();
        }
        let verbose = style < self.hopeless_rate + self.verbose_rate;
        if (s1 - s2).abs() < 1e-12 {
            return if verbose {
                "Taking both into account, the two descriptions are equally critical in tone."
                    .into()
            } else {
                "Tie.".into()
            };
        }
        let first_wins = s1 > s2;
        if verbose {
            let which = if first_wins { "first" } else { "second" };
            format!(
                "Taking both into account, the {which} description is more pointed in its \
                 criticism, though the other includes some negative sentiment as well."
            )
        } else {
            let label = if first_wins { labels.0 } else { labels.1 };
            format!("{label} expresses greater aversion or criticism than the other.")
        }
    }

    fn extraction_reply(&self, embedded: &str) -> String {
        let lower = embedded.to_lowercase();
        if lower.contains("equal") || lower.contains(" tie") {
            "Tie.".into()
        } else if lower.contains("first") && !lower.contains("second") {
            "Tweet Description 1".into()
        } else if lower.contains("second") && !lower.contains("first") {
            "Tweet Description 2".into()
        } else {
            "The remarks resist any direct comparison.".into()
        }
    }

    fn chain_reply(&self, conversation: &Conversation) -> String {
        let step = conversation.turns.len() / 2 + 1;
        let material: String = conversation
            .turns
            .iter()
            .map(|t| t.content.as_str())
            .collect::<Vec<_>>()
            .join("\u{1f}");
        let h = self.unit_hash("chain", &material);
        let tones = ["critical", "neutral", "approving", "sardonic", "alarmed"];
        let topics = ["policy", "a public figure", "an election", "party conduct", "the press"];
        format!(
            "Step {step}: the text discusses {} in a {} register (cue {:05}).",
            topics[(h * 5.0) as usize % 5],
            tones[(h * 25.0) as usize % 5],
            (h * 100_000.0) as u32
        )
    }
}

/// Locate `label1`/`label2` description blocks in a comparison prompt.
/// Returns the label pair and both descriptions.
fn split_comparison(content: &str) -> Option<((&str, &str), &str, &str)> {
    for (l1, l2) in [("Tweet Description 1", "Tweet Description 2"), ("Tweet 1", "Tweet 2")] {
        let tag1 = format!("{l1}: ");
        let tag2 = format!("{l2}: ");
        if let (Some(p1), Some(p2)) = (content.find(&tag1), content.find(&tag2)) {
            if p1 >= p2 {
                continue;
            }
            let desc1 = content[p1 + tag1.len()..p2].trim();
            let rest = &content[p2 + tag2.len()..];
            let desc2 = match rest.find("\n\nBased on") {
                Some(q) => rest[..q].trim(),
                None => rest.trim(),
            };
            return Some(((l1, l2), desc1, desc2));
        }
    }
    None
}

impl ChatBackend for SimulatedBackend {
    fn complete(
        &self,
        _model: &str,
        _temperature: f64,
        conversation: &Conversation,
    ) -> Result<String, BackendError> {
        let content = conversation
            .last_user()
            .ok_or_else(|| BackendError::Permanent("no user turn".into()))?;
        if let Some(pos) = content.find("\n\nIn the above Text") {
            return Ok(self.extraction_reply(&content[..pos]));
        }
        if let Some((labels, desc1, desc2)) = split_comparison(content) {
            return Ok(self.comparison_reply(labels, desc1, desc2));
        }
        Ok(self.chain_reply(conversation))
    }
}

// =============================================================================
// Test doubles
// =============================================================================

/// Backend that fails transiently `failures` times, then succeeds. With
/// `failures == u32::MAX` it never succeeds.
#[cfg(test)]
pub(crate) struct FlakyBackend {
    failures: u32,
    calls: AtomicU64,
}

#[cfg(test)]
impl FlakyBackend {
    pub(crate) fn new(failures: u32) -> Self {
        FlakyBackend { failures, calls: AtomicU64::new(0) }
    }
}

#[cfg(test)]
impl ChatBackend for FlakyBackend {
    fn complete(&self, _: &str, _: f64, _: &Conversation) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures as u64 {
            Err(BackendError::Transient(format!("synthetic outage {n}")))
        } else {
            Ok("recovered".into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    fn test_config(dir: &Path) -> ClientConfig {
        let mut config = ClientConfig::new("test-model", dir);
        config.backoff_ms = 0;
        config
    }

    fn ask(text: &str) -> Conversation {
        Conversation::new().user(text)
    }

    #[test]
    fn rejects_malformed_conversations() {
        let dir = tempfile::tempdir().unwrap();
        let client =
            LlmClient::new(test_config(dir.path()), Box::new(SimulatedBackend::new(1))).unwrap();

        let empty = Conversation::new();
        assert!(matches!(client.complete(&empty), Err(LlmError::MalformedConversation(_))));

        let double_user = Conversation::new().user("a").user("b");
        assert!(matches!(client.complete(&double_user), Err(LlmError::MalformedConversation(_))));

        let ends_assistant = Conversation::new().user("a").assistant("b");
        assert!(matches!(
            client.complete(&ends_assistant),
            Err(LlmError::MalformedConversation(_))
        ));
    }

    #[test]
    fn caches_by_full_request_content() {
        let dir = tempfile::tempdir().unwrap();
        let client =
            LlmClient::new(test_config(dir.path()), Box::new(SimulatedBackend::new(1))).unwrap();

        let first = client.complete(&ask("Summarize the Tweet.")).unwrap();
        let second = client.complete(&ask("Summarize the Tweet.")).unwrap();
        assert_eq!(first, second);
        assert_eq!(client.backend_calls(), 1);
        assert_eq!(client.cache_hits(), 1);

        // A different conversation is a different key.
        client.complete(&ask("Different question.")).unwrap();
        assert_eq!(client.backend_calls(), 2);
    }

    #[test]
    fn cache_persists_across_clients() {
        let dir = tempfile::tempdir().unwrap();
        let conv = ask("What does the text say?");
        let first = {
            let client =
                LlmClient::new(test_config(dir.path()), Box::new(SimulatedBackend::new(1)))
                    .unwrap();
            client.complete(&conv).unwrap()
        };
        let client =
            LlmClient::new(test_config(dir.path()), Box::new(SimulatedBackend::new(1))).unwrap();
        assert_eq!(client.complete(&conv).unwrap(), first);
        assert_eq!(client.backend_calls(), 0, "warm cache must not touch the backend");
    }

    #[test]
    fn cache_key_covers_model_temperature_system_and_turns() {
        let dir = tempfile::tempdir().unwrap();
        let base = test_config(dir.path());
        let client = LlmClient::new(base.clone(), Box::new(SimulatedBackend::new(1))).unwrap();
        let conv = ask("question");
        let key = client.cache_key(&conv);

        let mut other = base.clone();
        other.model = "other-model".into();
        let other_model = LlmClient::new(other, Box::new(SimulatedBackend::new(1))).unwrap();
        assert_ne!(key, other_model.cache_key(&conv));

        let mut warm = base.clone();
        warm.temperature = 0.7;
        let warm = LlmClient::new(warm, Box::new(SimulatedBackend::new(1))).unwrap();
        assert_ne!(key, warm.cache_key(&conv));

        assert_ne!(key, client.cache_key(&Conversation::with_system("be terse").user("question")));
        assert_ne!(key, client.cache_key(&ask("question 2")));
        assert_eq!(key, client.cache_key(&ask("question")));
    }

    #[test]
    fn retries_transient_failures_then_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = test_config(dir.path());
        config.max_retries = 3;
        let client = LlmClient::new(config, Box::new(FlakyBackend::new(2))).unwrap();
        assert_eq!(client.complete(&ask("q")).unwrap(), "recovered");
        assert_eq!(client.backend_calls(), 3, "two failures plus the success");
    }

    #[test]
    fn reports_unavailable_after_exhausting_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = test_config(dir.path());
        config.max_retries = 2;
        let client = LlmClient::new(config, Box::new(FlakyBackend::new(u32::MAX))).unwrap();
        match client.complete(&ask("q")) {
            Err(LlmError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected BackendUnavailable, got {other:?}"),
        }
        assert_eq!(client.backend_calls(), 3);
    }

    #[test]
    fn permanent_errors_do_not_retry() {
        struct Rejecting;
        impl ChatBackend for Rejecting {
            fn complete(&self, _: &str, _: f64, _: &Conversation) -> Result<String, BackendError> {
                Err(BackendError::Permanent("bad credentials".into()))
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new(test_config(dir.path()), Box::new(Rejecting)).unwrap();
        assert!(matches!(client.complete(&ask("q")), Err(LlmError::BackendRejected(_))));
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn empty_replies_are_an_error_and_not_cached() {
        struct Empty;
        impl ChatBackend for Empty {
            fn complete(&self, _: &str, _: f64, _: &Conversation) -> Result<String, BackendError> {
                Ok(String::new())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new(test_config(dir.path()), Box::new(Empty)).unwrap();
        assert!(matches!(client.complete(&ask("q")), Err(LlmError::EmptyCompletion)));
        assert!(matches!(client.complete(&ask("q")), Err(LlmError::EmptyCompletion)));
        assert_eq!(client.backend_calls(), 2, "failures must not populate the cache");
    }

    #[test]
    fn concurrent_callers_respect_max_parallel() {
        struct Probe {
            in_flight: AtomicUsize,
            peak: AtomicUsize,
        }
        impl ChatBackend for Probe {
            fn complete(&self, _: &str, _: f64, c: &Conversation) -> Result<String, BackendError> {
                let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.in_flight.fetch_sub(1, Ordering::SeqCst);
                Ok(format!("ok:{}", c.turns[0].content))
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let mut config = test_config(dir.path());
        config.max_parallel = 3;
        let probe = Arc::new(Probe { in_flight: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        struct Shared(Arc<Probe>);
        impl ChatBackend for Shared {
            fn complete(
                &self,
                m: &str,
                t: f64,
                c: &Conversation,
            ) -> Result<String, BackendError> {
                self.0.complete(m, t, c)
            }
        }
        let client = Arc::new(LlmClient::new(config, Box::new(Shared(probe.clone()))).unwrap());

        std::thread::scope(|scope| {
            for i in 0..12 {
                let client = Arc::clone(&client);
                scope.spawn(move || client.complete(&ask(&format!("q{i}"))).unwrap());
            }
        });
        assert!(
            probe.peak.load(Ordering::SeqCst) <= 3,
            "peak concurrency {} exceeded the cap",
            probe.peak.load(Ordering::SeqCst)
        );
        assert_eq!(client.backend_calls(), 12);
    }

    #[test]
    fn simulated_backend_is_deterministic_and_position_blind() {
        let backend = SimulatedBackend::new(42);
        let prompt = |a: &str, b: &str| {
            format!(
                "Tweet Description 1: {a}\n\nTweet Description 2: {b}\n\nBased on these two \
                 Tweet Descriptions, which expresses greater aversion?"
            )
        };
        let conv_ab = ask(&prompt("angry text about taxes", "mild text about weather"));
        let conv_ba = ask(&prompt("mild text about weather", "angry text about taxes"));

        let r1 = backend.complete("m", 0.0, &conv_ab).unwrap();
        let r2 = backend.complete("m", 0.0, &conv_ab).unwrap();
        assert_eq!(r1, r2);

        let mirrored = backend.complete("m", 0.0, &conv_ba).unwrap();
        let who = |reply: &str| {
            if reply.contains("Description 1") || reply.contains("first") {
                1
            } else if reply.contains("Description 2") || reply.contains("second") {
                2
            } else {
                0
            }
        };
        let (a, b) = (who(&r1), who(&mirrored));
        assert!(a != 0 && b != 0, "distinct texts should produce a winner: {r1:?} / {mirrored:?}");
        assert_eq!(a + b, 3, "swapping positions must swap the named side");

        // Identical content ties regardless of style.
        let tie = backend.complete("m", 0.0, &ask(&prompt("same words", "same words"))).unwrap();
        assert!(tie.to_lowercase().contains("tie") || tie.to_lowercase().contains("equal"));
    }

    #[test]
    fn simulated_extraction_reads_cues() {
        let backend = SimulatedBackend::new(7);
        let wrap = |prose: &str| {
            ask(&format!("{prose}\n\nIn the above Text, which Tweet Description is described..."))
        };
        assert_eq!(
            backend.complete("m", 0.0, &wrap("the second description is harsher")).unwrap(),
            "Tweet Description 2"
        );
        assert_eq!(
            backend.complete("m", 0.0, &wrap("the first description is harsher")).unwrap(),
            "Tweet Description 1"
        );
        assert_eq!(
            backend.complete("m", 0.0, &wrap("they are equally critical")).unwrap(),
            "Tie."
        );
        let hopeless = backend.complete("m", 0.0, &wrap("no comparison possible")).unwrap();
        assert!(!hopeless.to_lowercase().contains("tie"));
    }

    #[test]
    fn http_response_shapes_are_understood() {
        let openai = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "hello"}}]
        });
        assert_eq!(extract_assistant_message(&openai).unwrap(), "hello");
        let flat = serde_json::json!({"message": {"content": "hi"}});
        assert_eq!(extract_assistant_message(&flat).unwrap(), "hi");
        let bare = serde_json::json!({"content": "yo"});
        assert_eq!(extract_assistant_message(&bare).unwrap(), "yo");
        assert!(extract_assistant_message(&serde_json::json!({"other": 1})).is_none());
    }
}
