//! The run configuration file: where everything lives and how the client,
//! sampler, and estimators are tuned.
//!
//! Every field has a default except `concept`, so a minimal config is one
//! line. Prompt paths may be omitted when the concept matches one of the
//! bundled prompt sets. Unknown keys are rejected so typos surface as
//! validation errors instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use pairscale::cgcot::{defaults, PromptChain, DESC1_PLACEHOLDER, DESC2_PLACEHOLDER, REPLY_PLACEHOLDER};
use pairscale::llm::{ChatBackend, ClientConfig, HttpBackend, LlmClient, SimulatedBackend};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Concept the prompts target; must match the prompt chain's own
    /// concept name.
    pub concept: String,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub client: Client,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default)]
    pub estimator: Estimator,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Prompt chain JSON; defaults to the bundled chain for the concept.
    pub chain: Option<PathBuf>,
    /// Comparison prompt template with {{DESC1}}/{{DESC2}}.
    pub comparison: Option<PathBuf>,
    /// Extraction prompt template with {{REPLY}}.
    pub extraction: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            chain: None,
            comparison: None,
            extraction: None,
            cache_dir: "cache".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Simulated,
    Http,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Client {
    pub backend: BackendKind,
    pub model: String,
    pub temperature: f64,
    pub max_parallel: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Chat-completions URL; required for the http backend.
    pub endpoint: Option<String>,
    /// Simulated-backend style knobs.
    pub sim_seed: u64,
    pub sim_verbose_rate: f64,
    pub sim_hopeless_rate: f64,
}

impl Default for Client {
    fn default() -> Self {
        Client {
            backend: BackendKind::Simulated,
            model: "sim-judge".into(),
            temperature: 0.0,
            max_parallel: 4,
            max_retries: 3,
            backoff_ms: 250,
            endpoint: None,
            sim_seed: 17,
            sim_verbose_rate: 0.25,
            sim_hopeless_rate: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampler {
    pub k_per_id: usize,
    pub seed: u64,
    pub randomize_position: bool,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler { k_per_id: 20, seed: 42, randomize_position: true }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Estimator {
    pub bt_tol: f64,
    pub bt_max_iter: usize,
    pub wf_tol: f64,
    pub wf_max_iter: usize,
    pub ci_level: f64,
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator { bt_tol: 1e-8, bt_max_iter: 200, wf_tol: 1e-8, wf_max_iter: 500, ci_level: 0.95 }
    }
}

/// The three prompt artifacts a comparison run needs, loaded and checked.
pub struct PromptSet {
    pub chain: PromptChain,
    pub comparison: String,
    pub extraction: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&raw).map_err(|e| {
            CliError::Validation(format!("config {}: {e}", path.display()))
        })?;
        if config.concept.is_empty() {
            return Err(CliError::Validation("config field `concept` is empty".into()));
        }
        if !(config.estimator.ci_level > 0.0 && config.estimator.ci_level < 1.0) {
            return Err(CliError::Validation(format!(
                "config field `estimator.ci_level` must be in (0, 1), got {}",
                config.estimator.ci_level
            )));
        }
        Ok(config)
    }

    /// Path under the output directory, creating the directory on first use.
    pub fn out(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.paths.output_dir).map_err(|e| {
            CliError::Pipeline(format!(
                "cannot create paths.output_dir {}: {e}",
                self.paths.output_dir.display()
            ))
        })?;
        Ok(self.paths.output_dir.join(name))
    }

    /// Fail with the *field name* when a configured input file is absent.
    pub fn require_file(&self, path: &Path, field: &str) -> Result<(), CliError> {
        if path.is_file() {
            Ok(())
        } else {
            Err(CliError::Validation(format!(
                "config field `{field}` points to a missing file: {}",
                path.display()
            )))
        }
    }

    /// Load the prompt chain and both templates, falling back to the
    /// bundled set matching `concept`, and validate placeholders and the
    /// concept name.
    pub fn prompts(&self) -> Result<PromptSet, CliError> {
        let builtin = match self.concept.as_str() {
            "aversion-to-republicans" => Some((
                defaults::CHAIN_REPUBLICANS,
                defaults::COMPARISON_REPUBLICANS,
                defaults::EXTRACTION_REPUBLICANS,
            )),
            "aversion-to-democrats" => Some((
                defaults::CHAIN_DEMOCRATS,
                defaults::COMPARISON_DEMOCRATS,
                defaults::EXTRACTION_DEMOCRATS,
            )),
            _ => None,
        };

        let chain = match &self.paths.chain {
            Some(path) => {
                self.require_file(path, "paths.chain")?;
                PromptChain::load(path).map_err(|e| {
                    CliError::Validation(format!("config field `paths.chain`: {e}"))
                })?
            }
            None => match builtin {
                Some((chain_json, _, _)) => PromptChain::from_json_str(chain_json)
                    .expect("bundled prompt chain parses"),
                None => {
                    return Err(CliError::Validation(format!(
                        "config field `paths.chain` is required: no bundled prompts for \
                         concept {:?}",
                        self.concept
                    )))
                }
            },
        };
        if chain.concept != self.concept {
            return Err(CliError::Validation(format!(
                "config field `concept` is {:?} but the prompt chain is for {:?}",
                self.concept, chain.concept
            )));
        }

        let comparison = self.read_template(
            self.paths.comparison.as_deref(),
            "paths.comparison",
            builtin.map(|(_, c, _)| c),
        )?;
        for placeholder in [DESC1_PLACEHOLDER, DESC2_PLACEHOLDER] {
            if !comparison.contains(placeholder) {
                return Err(CliError::Validation(format!(
                    "config field `paths.comparison`: template lacks {placeholder}"
                )));
            }
        }
        let extraction = self.read_template(
            self.paths.extraction.as_deref(),
            "paths.extraction",
            builtin.map(|(_, _, e)| e),
        )?;
        if !extraction.contains(REPLY_PLACEHOLDER) {
            return Err(CliError::Validation(format!(
                "config field `paths.extraction`: template lacks {REPLY_PLACEHOLDER}"
            )));
        }

        Ok(PromptSet { chain, comparison, extraction })
    }

    fn read_template(
        &self,
        path: Option<&Path>,
        field: &str,
        builtin: Option<&str>,
    ) -> Result<String, CliError> {
        match path {
            Some(p) => {
                self.require_file(p, field)?;
                std::fs::read_to_string(p).map_err(|e| {
                    CliError::Validation(format!("config field `{field}`: {e}"))
                })
            }
            None => builtin.map(str::to_string).ok_or_else(|| {
                CliError::Validation(format!(
                    "config field `{field}` is required: no bundled prompts for concept {:?}",
                    self.concept
                ))
            }),
        }
    }

    /// Build the judge client described by `[client]`.
    pub fn build_client(&self) -> Result<LlmClient, CliError> {
        let mut cc = ClientConfig::new(&self.client.model, &self.paths.cache_dir);
        cc.temperature = self.client.temperature;
        cc.max_parallel = self.client.max_parallel;
        cc.max_retries = self.client.max_retries;
        cc.backoff_ms = self.client.backoff_ms;

        let backend: Box<dyn ChatBackend> = match self.client.backend {
            BackendKind::Simulated => Box::new(SimulatedBackend::with_styles(
                self.client.sim_seed,
                self.client.sim_verbose_rate,
                self.client.sim_hopeless_rate,
            )),
            BackendKind::Http => {
                let endpoint = self.client.endpoint.as_deref().ok_or_else(|| {
                    CliError::Validation(
                        "config field `client.endpoint` is required for the http backend".into(),
                    )
                })?;
                Box::new(HttpBackend::new(endpoint).map_err(|e| {
                    CliError::Validation(format!("config field `client.endpoint`: {e}"))
                })?)
            }
        };
        LlmClient::new(cc, backend).map_err(crate::pipeline)
    }
}
