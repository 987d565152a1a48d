//! One function per subcommand. Every stage reads its inputs from files,
//! writes its outputs to files, and prints a one-paragraph summary, so the
//! pipeline can be driven stage by stage, inspected between stages, and
//! resumed after interruption.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pairscale::bradley_terry::{
    accumulate, confidence_intervals, fit, quasi_variances, scaled_items, FitOptions, FitSummary,
};
use pairscale::cgcot::{
    self, generate_breakdown, load_breakdowns, raw_text_template, run_comparisons,
    run_comparisons_texts, Breakdown, ComparisonPrompts, ComparisonSinks, ManualReviewEntry,
    Verdict,
};
use pairscale::corpus::{append_record, load_records, save_records, Corpus};
use pairscale::eval::{evaluate, EvalReport};
use pairscale::sampler::{possible_matchups, sample_matchups, Matchup, SamplerConfig};
use pairscale::simjudge::{generate_budget_verdicts, JudgeModel, Noise};
use pairscale::wordfish::{build_dtm, fit_wordfish, trim, wordfish_scores, WordfishOptions};
use pairscale::ItemId;

use crate::config::RunConfig;
use crate::{pipeline, CliError};

// =============================================================================
// File-format structs shared between stages
// =============================================================================

/// The subset of a score record every downstream consumer agrees on. Both
/// `scale` and `wordfish` write files carrying these two fields (plus their
/// own extras), so `eval` can read either.
#[derive(Debug, Serialize, Deserialize)]
struct ScoreRecord {
    item_id: ItemId,
    score_unit: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct WordfishRecord {
    item_id: ItemId,
    omega: f64,
    score_unit: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRecord {
    item_id: ItemId,
    true_lambda: f64,
}

// =============================================================================
// Shared plumbing
// =============================================================================

fn load_corpus(config: &RunConfig) -> Result<Corpus, CliError> {
    config.require_file(&config.paths.corpus, "paths.corpus")?;
    Corpus::load(&config.paths.corpus).map_err(pipeline)
}

/// Load a JSON Lines file that an interrupted run may have left with a torn
/// final line. A parse failure on the last line truncates the file back to
/// the clean prefix (with a warning); a failure anywhere else is corruption
/// and fails the stage. A missing file is an empty prefix.
fn load_resumable<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Pipeline(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut clean_bytes: u64 = 0;
    let mut line = String::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| CliError::Pipeline(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            return Ok(records);
        }
        lineno += 1;
        if line.trim().is_empty() {
            clean_bytes += n as u64;
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => {
                records.push(record);
                clean_bytes += n as u64;
            }
            Err(e) => {
                // Only a torn tail is recoverable: anything after it would
                // prove the damage is mid-file.
                let mut rest = String::new();
                reader.read_to_string(&mut rest).map_err(|e| {
                    CliError::Pipeline(format!("cannot read {}: {e}", path.display()))
                })?;
                if !rest.trim().is_empty() {
                    return Err(CliError::Pipeline(format!(
                        "{} line {lineno} is corrupt: {e}",
                        path.display()
                    )));
                }
                log::warn!(
                    "{} ends mid-record (line {lineno}); truncating to the last complete record",
                    path.display()
                );
                OpenOptions::new()
                    .write(true)
                    .open(path)
                    .and_then(|f| f.set_len(clean_bytes))
                    .map_err(|e| {
                        CliError::Pipeline(format!("cannot truncate {}: {e}", path.display()))
                    })?;
                return Ok(records);
            }
        }
    }
}

fn open_append(path: &Path) -> Result<std::fs::File, CliError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Pipeline(format!("cannot open {} for append: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Pipeline(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Pipeline(format!("cannot write {}: {e}", path.display())))
}

// =============================================================================
// ingest
// =============================================================================

pub fn ingest(config: &RunConfig, input: &Path) -> Result<(), CliError> {
    if !input.is_file() {
        return Err(CliError::Validation(format!("input file not found: {}", input.display())));
    }
    // Structural problems in user-supplied data are validation failures,
    // complete with the offending line number from the corpus loader.
    let corpus = Corpus::load(input).map_err(|e| CliError::Validation(e.to_string()))?;
    corpus.save(&config.paths.corpus).map_err(pipeline)?;
    println!(
        "ingested {} items from {} -> {}",
        corpus.len(),
        input.display(),
        config.paths.corpus.display()
    );
    Ok(())
}

// =============================================================================
// breakdown
// =============================================================================

pub fn breakdown(config: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(config)?;
    let prompts = config.prompts()?;
    let out_path = config.out("breakdowns.jsonl")?;

    // Resume: anything already on disk is kept, provided it belongs to this
    // corpus and concept.
    let existing = if out_path.exists() {
        load_breakdowns(&out_path).map_err(pipeline)?
    } else {
        Vec::new()
    };
    let mut done: HashSet<&str> = HashSet::with_capacity(existing.len());
    for b in &existing {
        if corpus.get(&b.item_id).is_none() || b.concept != config.concept {
            return Err(CliError::Validation(format!(
                "{} holds a breakdown for {:?} (concept {:?}) that does not match the \
                 configured corpus and concept; remove the file to regenerate",
                out_path.display(),
                b.item_id,
                b.concept
            )));
        }
        done.insert(b.item_id.as_str());
    }
    let todo: Vec<_> = corpus.items().iter().filter(|t| !done.contains(t.id.as_str())).collect();
    if todo.is_empty() {
        println!(
            "all {} items already have breakdowns in {}; nothing to do",
            corpus.len(),
            out_path.display()
        );
        return Ok(());
    }

    let client = config.build_client()?;
    let workers = config.client.max_parallel.clamp(1, todo.len());

    // Work-steal by index so results can be written back in corpus order no
    // matter which worker finishes first. On failure the flag stops idle
    // workers; in-flight calls are allowed to finish so their cache entries
    // still land and the next run picks them up for free.
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<Breakdown, cgcot::CgcotError>>>> =
        Mutex::new((0..todo.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= todo.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let outcome = generate_breakdown(todo[i], &prompts.chain, &client);
                if outcome.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                results.lock().expect("no poisoned result slots")[i] = Some(outcome);
            });
        }
    });

    // Append the clean prefix, then report the first failure if there was
    // one. Everything appended stays on disk, so a rerun resumes from here.
    let results = results.into_inner().expect("no poisoned result slots");
    let mut sink = open_append(&out_path)?;
    let mut appended = 0usize;
    let mut failure: Option<String> = None;
    for slot in results {
        match slot {
            Some(Ok(b)) if failure.is_none() => {
                append_record(&mut sink, &b).map_err(|e| {
                    CliError::Pipeline(format!("cannot write {}: {e}", out_path.display()))
                })?;
                appended += 1;
            }
            Some(Err(e)) if failure.is_none() => failure = Some(e.to_string()),
            _ => {}
        }
    }
    if let Some(msg) = failure {
        return Err(CliError::Pipeline(format!(
            "{msg} ({appended} new breakdowns kept in {}; rerun to resume)",
            out_path.display()
        )));
    }
    println!(
        "wrote {appended} breakdowns ({} already present) -> {}; backend calls {}, cache hits {}",
        existing.len(),
        out_path.display(),
        client.backend_calls(),
        client.cache_hits()
    );
    Ok(())
}

// =============================================================================
// sample
// =============================================================================

pub fn sample(config: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(config)?;
    let mut sampler = SamplerConfig::new(config.sampler.k_per_id, config.sampler.seed);
    sampler.randomize_position = config.sampler.randomize_position;
    let matchups =
        sample_matchups(&corpus.ids(), &sampler).map_err(|e| CliError::Validation(e.to_string()))?;
    let out_path = config.out("matchups.jsonl")?;

    // The draw is deterministic, so an existing file either matches (rerun,
    // nothing to do) or was made under different settings and must not be
    // silently replaced: downstream verdicts would no longer line up.
    if out_path.exists() {
        let existing: Vec<Matchup> = load_records(&out_path).map_err(pipeline)?;
        if existing == matchups {
            println!("{} already holds this sample; nothing to do", out_path.display());
            return Ok(());
        }
        return Err(CliError::Validation(format!(
            "{} holds a different sample than the configured corpus/sampler would draw; \
             remove it to resample (this invalidates any verdicts judged from it)",
            out_path.display()
        )));
    }
    save_records(&out_path, &matchups).map_err(pipeline)?;
    println!(
        "sampled {} matchups (k={} over {} items, {} possible pairs) -> {}",
        matchups.len(),
        config.sampler.k_per_id,
        corpus.len(),
        possible_matchups(corpus.len()),
        out_path.display()
    );
    Ok(())
}

// =============================================================================
// compare
// =============================================================================

pub fn compare(
    config: &RunConfig,
    raw_text: bool,
    merge_manual: Option<&Path>,
) -> Result<(), CliError> {
    let verdicts_path = config.out("verdicts.jsonl")?;
    let queue_path = config.out("manual_queue.jsonl")?;
    if let Some(merge_path) = merge_manual {
        return merge_manual_verdicts(merge_path, &verdicts_path, &queue_path);
    }

    let corpus = load_corpus(config)?;
    let matchups_path = config.out("matchups.jsonl")?;
    if !matchups_path.is_file() {
        return Err(CliError::Validation(format!(
            "no matchup sample at {}; run `pairscale sample` first",
            matchups_path.display()
        )));
    }
    let matchups: Vec<Matchup> = load_records(&matchups_path).map_err(pipeline)?;

    // Resume: records already judged (or queued, or merged back by hand)
    // cover a prefix of the matchup list. Order within the two files is
    // free — merging moves records between them — but together they must
    // account for exactly the matchups of that prefix.
    let verdicts: Vec<Verdict> = load_resumable(&verdicts_path)?;
    let queued: Vec<ManualReviewEntry> = load_resumable(&queue_path)?;
    let processed = verdicts.len() + queued.len();
    if processed > matchups.len() {
        return Err(CliError::Validation(format!(
            "{} and {} hold {processed} records but only {} matchups are sampled; \
             they belong to a different sample — remove them to re-judge",
            verdicts_path.display(),
            queue_path.display(),
            matchups.len()
        )));
    }
    let mut expected: HashMap<(&str, &str), isize> = HashMap::new();
    for m in &matchups[..processed] {
        *expected.entry((m.first_id.as_str(), m.second_id.as_str())).or_default() += 1;
    }
    let seen = verdicts
        .iter()
        .map(|v| (v.first_id.as_str(), v.second_id.as_str()))
        .chain(queued.iter().map(|q| (q.first_id.as_str(), q.second_id.as_str())));
    for pair in seen {
        *expected.entry(pair).or_default() -= 1;
    }
    if expected.values().any(|&count| count != 0) {
        return Err(CliError::Validation(format!(
            "{} and {} do not line up with the first {processed} sampled matchups; \
             they belong to a different sample — remove them to re-judge",
            verdicts_path.display(),
            queue_path.display()
        )));
    }
    let remaining = &matchups[processed..];
    if remaining.is_empty() {
        println!(
            "all {} matchups already judged ({} verdicts, {} queued); nothing to do",
            matchups.len(),
            verdicts.len(),
            queued.len()
        );
        return Ok(());
    }

    let prompts = config.prompts()?;
    let client = config.build_client()?;
    let mut verdict_sink = open_append(&verdicts_path)?;
    let mut queue_sink = open_append(&queue_path)?;
    let sinks = ComparisonSinks { verdicts: &mut verdict_sink, manual_queue: &mut queue_sink };

    let results = if raw_text {
        let texts: HashMap<ItemId, String> =
            corpus.items().iter().map(|t| (t.id.clone(), t.text.clone())).collect();
        let comparison = raw_text_template(&prompts.comparison);
        let extraction = raw_text_template(&prompts.extraction);
        run_comparisons_texts(
            &texts,
            remaining,
            &ComparisonPrompts { comparison: &comparison, extraction: &extraction },
            &client,
            Some(sinks),
        )
    } else {
        let path = config.out("breakdowns.jsonl")?;
        if !path.is_file() {
            return Err(CliError::Validation(format!(
                "no breakdowns at {}; run `pairscale breakdown` first (or pass --raw-text)",
                path.display()
            )));
        }
        let breakdowns: HashMap<ItemId, Breakdown> = load_breakdowns(&path)
            .map_err(pipeline)?
            .into_iter()
            .map(|b| (b.item_id.clone(), b))
            .collect();
        let missing: Vec<&str> = remaining
            .iter()
            .flat_map(|m| [m.first_id.as_str(), m.second_id.as_str()])
            .filter(|id| !breakdowns.contains_key(*id))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Validation(format!(
                "{} items in the sample have no breakdown (e.g. {:?}); \
                 run `pairscale breakdown` to completion first",
                missing.len(),
                missing[0]
            )));
        }
        run_comparisons(
            &breakdowns,
            remaining,
            &ComparisonPrompts {
                comparison: &prompts.comparison,
                extraction: &prompts.extraction,
            },
            &client,
            Some(sinks),
        )
    }
    .map_err(pipeline)?;

    let resolved = results.iter().filter(|r| r.verdict().is_some()).count();
    let newly_queued = results.len() - resolved;
    println!(
        "judged {} matchups: {} verdicts -> {}, {} queued for review -> {} \
         ({} resumed); backend calls {}, cache hits {}",
        results.len(),
        resolved,
        verdicts_path.display(),
        newly_queued,
        queue_path.display(),
        processed,
        client.backend_calls(),
        client.cache_hits()
    );
    if newly_queued + queued.len() > 0 {
        println!(
            "note: review queued records, add an \"outcome\" field to each, then run \
             `pairscale compare --merge-manual <file>`"
        );
    }
    Ok(())
}

/// Fold human-completed review entries back into the verdicts file and drop
/// them from the queue. A completed entry is the queued record plus an
/// `"outcome"` field, which makes it deserialize as a manual-path verdict.
fn merge_manual_verdicts(
    merge_path: &Path,
    verdicts_path: &Path,
    queue_path: &Path,
) -> Result<(), CliError> {
    if !merge_path.is_file() {
        return Err(CliError::Validation(format!("input file not found: {}", merge_path.display())));
    }
    let completed: Vec<Verdict> =
        load_records(merge_path).map_err(|e| CliError::Validation(e.to_string()))?;
    for (i, v) in completed.iter().enumerate() {
        if v.extraction_path != cgcot::ExtractionPath::Manual {
            return Err(CliError::Validation(format!(
                "{} record {}: extraction_path must be \"manual\" for merged verdicts",
                merge_path.display(),
                i + 1
            )));
        }
    }
    let mut queue: Vec<ManualReviewEntry> = load_resumable(queue_path)?;

    // Each completed verdict must consume one queued entry (matched on the
    // pair and the original reply), so nothing can be merged twice and
    // nothing invented can slip in.
    for (i, v) in completed.iter().enumerate() {
        let position = queue.iter().position(|q| {
            q.first_id == v.first_id && q.second_id == v.second_id && q.raw_reply == v.raw_reply
        });
        match position {
            Some(at) => {
                queue.remove(at);
            }
            None => {
                return Err(CliError::Validation(format!(
                    "{} record {} ({} vs {}) does not match any entry in {}",
                    merge_path.display(),
                    i + 1,
                    v.first_id,
                    v.second_id,
                    queue_path.display()
                )));
            }
        }
    }
    let mut sink = open_append(verdicts_path)?;
    for v in &completed {
        append_record(&mut sink, v).map_err(|e| {
            CliError::Pipeline(format!("cannot write {}: {e}", verdicts_path.display()))
        })?;
    }
    save_records(queue_path, &queue).map_err(pipeline)?;
    println!(
        "merged {} manual verdicts -> {}; {} entries still queued in {}",
        completed.len(),
        verdicts_path.display(),
        queue.len(),
        queue_path.display()
    );
    Ok(())
}

// =============================================================================
// scale
// =============================================================================

pub fn scale(
    config: &RunConfig,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let corpus = load_corpus(config)?;
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => config.out("verdicts.jsonl")?,
    };
    if !input.is_file() {
        return Err(CliError::Validation(format!(
            "no verdicts at {}; run `pairscale compare` first or pass --input",
            input.display()
        )));
    }
    let verdicts: Vec<Verdict> = load_records(&input).map_err(pipeline)?;

    let data = accumulate(&verdicts, &corpus.ids()).map_err(pipeline)?;
    let options =
        FitOptions { tol: config.estimator.bt_tol, max_iter: config.estimator.bt_max_iter };
    let bt = fit(&data, &options).map_err(pipeline)?;
    let qv = quasi_variances(&bt).map_err(pipeline)?;
    let intervals = confidence_intervals(&bt, &qv, config.estimator.ci_level).map_err(pipeline)?;
    let items = scaled_items(&bt, &qv, &intervals);

    let output = match output {
        Some(p) => p.to_path_buf(),
        None => config.out("scores.jsonl")?,
    };
    save_records(&output, &items).map_err(pipeline)?;
    let summary = FitSummary {
        loglik: bt.loglik,
        iterations: bt.iterations,
        converged: bt.converged,
        worst_relative_error: qv.worst_relative_error,
    };
    let summary_path = config.out("scale_summary.json")?;
    write_json(&summary_path, &summary)?;
    println!(
        "scaled {} items from {} verdicts -> {} (loglik {:.4}, {} iterations, \
         worst quasi-variance error {:.2}%)",
        items.len(),
        verdicts.len(),
        output.display(),
        bt.loglik,
        bt.iterations,
        qv.worst_relative_error * 100.0
    );
    Ok(())
}

// =============================================================================
// wordfish
// =============================================================================

pub fn wordfish(
    config: &RunConfig,
    min_total: usize,
    min_docs: usize,
    anchor_low: Option<&str>,
    anchor_high: Option<&str>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let corpus = load_corpus(config)?;
    let docs: Vec<(ItemId, String)> =
        corpus.items().iter().map(|t| (t.id.clone(), t.text.clone())).collect();
    let dtm = build_dtm(&docs).map_err(pipeline)?;
    let trimmed =
        trim(&dtm, min_total, min_docs).map_err(|e| CliError::Validation(e.to_string()))?;

    // Anchors are named by item id; they must survive trimming to be usable.
    let resolve = |id: Option<&str>, fallback: usize, flag: &str| -> Result<usize, CliError> {
        match id {
            None => Ok(fallback),
            Some(id) => {
                trimmed.dtm.doc_ids.iter().position(|d| d == id).ok_or_else(|| {
                    CliError::Validation(format!(
                        "{flag}: item {id:?} is not in the trimmed corpus \
                         (unknown id, or every surviving term trimmed away)"
                    ))
                })
            }
        }
    };
    let lo = resolve(anchor_low, 0, "--anchor-low")?;
    let hi = resolve(anchor_high, trimmed.dtm.doc_ids.len() - 1, "--anchor-high")?;
    let options = WordfishOptions {
        tol: config.estimator.wf_tol,
        max_iter: config.estimator.wf_max_iter,
        anchor: Some((lo, hi)),
    };
    let wf = fit_wordfish(&trimmed.dtm, &options).map_err(pipeline)?;

    let scores = wordfish_scores(&wf);
    let records: Vec<WordfishRecord> = wf
        .doc_ids
        .iter()
        .zip(wf.omega.iter().zip(&scores))
        .map(|(id, (&omega, &score_unit))| WordfishRecord {
            item_id: id.clone(),
            omega,
            score_unit,
        })
        .collect();
    let output = match output {
        Some(p) => p.to_path_buf(),
        None => config.out("wordfish.jsonl")?,
    };
    save_records(&output, &records).map_err(pipeline)?;
    let summary = serde_json::json!({
        "n_docs": wf.doc_ids.len(),
        "n_terms": wf.vocab.len(),
        "dropped_doc_ids": trimmed.dropped_doc_ids,
        "loglik": wf.loglik,
        "iterations": wf.iterations,
        "converged": wf.converged,
    });
    write_json(&config.out("wordfish_summary.json")?, &summary)?;
    println!(
        "wordfish scaled {} docs over {} terms -> {} ({} docs dropped by trimming, \
         loglik {:.4}, {} iterations)",
        wf.doc_ids.len(),
        wf.vocab.len(),
        output.display(),
        trimmed.dropped_doc_ids.len(),
        wf.loglik,
        wf.iterations
    );
    Ok(())
}

// =============================================================================
// eval
// =============================================================================

pub fn eval(
    config: &RunConfig,
    scores_path: Option<&Path>,
    gold_threshold: f64,
) -> Result<(), CliError> {
    let corpus = load_corpus(config)?;
    let scores_path = match scores_path {
        Some(p) => p.to_path_buf(),
        None => config.out("scores.jsonl")?,
    };
    if !scores_path.is_file() {
        return Err(CliError::Validation(format!(
            "no scores at {}; run `pairscale scale` (or `wordfish`) first or pass --scores",
            scores_path.display()
        )));
    }
    let records: Vec<ScoreRecord> = load_records(&scores_path).map_err(pipeline)?;

    // Pair each scored item with its gold label count for the configured
    // concept. Items that were never hand-labeled are skipped (and counted);
    // a scored item missing from the corpus outright is a mismatch.
    let mut scores = Vec::new();
    let mut gold = Vec::new();
    let mut unlabeled = 0usize;
    for r in &records {
        let item = corpus.get(&r.item_id).ok_or_else(|| {
            CliError::Validation(format!(
                "{} scores item {:?} which is not in the corpus at {}",
                scores_path.display(),
                r.item_id,
                config.paths.corpus.display()
            ))
        })?;
        match item.labels.as_ref().and_then(|l| l.get(&config.concept)) {
            Some(&count) => {
                scores.push(r.score_unit);
                gold.push(count as f64);
            }
            None => unlabeled += 1,
        }
    }
    if scores.is_empty() {
        return Err(CliError::Validation(format!(
            "no corpus item carries a {:?} label count; nothing to evaluate against",
            config.concept
        )));
    }
    let report = evaluate(&scores, &gold, gold_threshold).map_err(pipeline)?;

    // The pairwise scale has a defined direction but baselines generally
    // don't, so |rho| is reported alongside the signed value.
    #[derive(Serialize)]
    struct EvalOutput {
        #[serde(flatten)]
        report: EvalReport,
        abs_rho: f64,
        unlabeled: usize,
        gold_threshold: f64,
    }
    let out = EvalOutput { abs_rho: report.rho.abs(), unlabeled, gold_threshold, report };
    let report_path = config.out("eval_report.json")?;
    write_json(&report_path, &out)?;

    let r = &out.report;
    println!("evaluated {} labeled items ({} unlabeled skipped)", r.n, unlabeled);
    println!("  spearman rho   {:+.4}  (|rho| {:.4})", r.rho, out.abs_rho);
    println!("  mean cutoff    {:.4}", r.cutoff);
    println!("  precision      {:.4}", r.precision);
    println!("  recall         {:.4}", r.recall);
    println!("  f1             {:.4}", r.f1);
    println!(
        "  confusion      tp {} / fp {} / fn {} / tn {}",
        r.confusion.true_pos, r.confusion.false_pos, r.confusion.false_neg, r.confusion.true_neg
    );
    println!("report -> {}", report_path.display());
    Ok(())
}

// =============================================================================
// simulate
// =============================================================================

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    config: &RunConfig,
    n: usize,
    budgets: &[usize],
    tau: f64,
    noise: Noise,
    seed: u64,
    bimodal: Option<f64>,
) -> Result<(), CliError> {
    if n < 2 {
        return Err(CliError::Validation(format!("--n must be at least 2, got {n}")));
    }
    if budgets.iter().any(|&k| k == 0) {
        return Err(CliError::Validation("--budgets entries must be at least 1".into()));
    }
    let ids: Vec<ItemId> = (0..n).map(|i| format!("item_{i:04}")).collect();
    let (model, members) = match bimodal {
        Some(separation) => {
            let (model, members) = JudgeModel::bimodal(&ids, separation, tau, noise, seed)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            (model, Some(members))
        }
        None => {
            let model = JudgeModel::standard_normal(&ids, tau, noise, seed)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            (model, None)
        }
    };

    // Gold label counts on a 0..=3 scale, as a hand-coder would assign:
    // quartiles of the true score, or the cluster extremes for bimodal
    // draws. The default eval threshold of 2 then marks the upper half.
    let rating_of = |pos_in_sorted: usize, member: Option<bool>| -> u32 {
        match member {
            Some(true) => 3,
            Some(false) => 0,
            None => ((pos_in_sorted * 4) / n).min(3) as u32,
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        model.true_lambda[&ids[a]].total_cmp(&model.true_lambda[&ids[b]])
    });
    let mut rank = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        rank[idx] = pos;
    }
    let items: Vec<pairscale::corpus::TextItem> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let lambda = model.true_lambda[id];
            let rating = rating_of(rank[i], members.as_ref().map(|m| m[i]));
            pairscale::corpus::TextItem {
                id: id.clone(),
                text: format!("synthetic item {i} with true score {lambda:+.4}"),
                labels: Some(BTreeMap::from([(config.concept.clone(), rating)])),
            }
        })
        .collect();

    // Never clobber a real corpus: an existing file must already be this
    // exact simulation (same seed and settings reproduce it bit for bit).
    let corpus = Corpus::from_items(items).map_err(pipeline)?;
    if config.paths.corpus.exists() {
        let existing = Corpus::load(&config.paths.corpus).map_err(pipeline)?;
        if existing.items() != corpus.items() {
            return Err(CliError::Validation(format!(
                "corpus at {} differs from this simulation; remove it or point \
                 paths.corpus elsewhere",
                config.paths.corpus.display()
            )));
        }
    } else {
        corpus.save(&config.paths.corpus).map_err(pipeline)?;
    }

    let truth: Vec<TruthRecord> = ids
        .iter()
        .map(|id| TruthRecord { item_id: id.clone(), true_lambda: model.true_lambda[id] })
        .collect();
    save_records(&config.out("sim_truth.jsonl")?, &truth).map_err(pipeline)?;

    let by_budget =
        generate_budget_verdicts(&model, budgets, config.sampler.seed, config.sampler.randomize_position)
            .map_err(pipeline)?;
    let mut budget_lines = Vec::new();
    for (k, verdicts) in &by_budget {
        let path = config.out(&format!("sim_verdicts_k{k}.jsonl"))?;
        save_records(&path, verdicts).map_err(pipeline)?;
        budget_lines.push(format!("  k={k}: {} verdicts -> {}", verdicts.len(), path.display()));
    }
    println!(
        "simulated {n} items ({}) -> {}; true scores -> sim_truth.jsonl",
        match bimodal {
            Some(sep) => format!("two clusters {sep} apart"),
            None => "standard normal scores".to_string(),
        },
        config.paths.corpus.display()
    );
    for line in budget_lines {
        println!("{line}");
    }
    Ok(())
}
