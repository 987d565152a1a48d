//! Seeded synthetic judge: the offline oracle for end-to-end validation.
//!
//! Items carry latent true scores; matchups are answered the way the
//! Bradley-Terry likelihood assumes they would be — ties inside a margin τ,
//! then (in logistic mode) the first item winning with probability
//! σ(λ_first − λ_second) — so estimator-consistency tests are well-posed.
//! Every draw is keyed by (seed, unordered pair, draw index), which makes
//! replays identical, judging order irrelevant, and `judge(a, b)` the exact
//! mirror of `judge(b, a)`.
//!
//! Emitted verdicts use the comparison pipeline's own record format with
//! constrained-form reply strings, so downstream stages cannot tell them
//! apart from parsed LLM output.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::cgcot::{ExtractionPath, Outcome, Verdict};
use crate::sampler::{sample_matchups, SamplerConfig, SamplerError};
use crate::ItemId;

#[derive(Debug, thiserror::Error)]
pub enum SimJudgeError {
    #[error("no true score for item {0}")]
    UnknownItem(ItemId),
    #[error("duplicate item {0}")]
    DuplicateItem(ItemId),
    #[error("tie margin must be >= 0, got {0}")]
    InvalidTau(f64),
    #[error("need at least one item")]
    NoItems,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// How matchup outcomes respond to the score difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// Tie inside the margin, otherwise the higher score always wins.
    Deterministic,
    /// Tie with probability max(0, 1 − |Δ|/τ), otherwise a Bradley-Terry
    /// coin: first wins with probability σ(λ_first − λ_second).
    Logistic,
}

#[derive(Debug, Clone)]
pub struct JudgeModel {
    /// Item order as supplied; drives matchup sampling.
    pub items: Vec<ItemId>,
    pub true_lambda: BTreeMap<ItemId, f64>,
    pub tie_margin: f64,
    pub noise: Noise,
    pub seed: u64,
}

impl JudgeModel {
    pub fn new(
        scores: Vec<(ItemId, f64)>,
        tie_margin: f64,
        noise: Noise,
        seed: u64,
    ) -> Result<JudgeModel, SimJudgeError> {
        if scores.is_empty() {
            return Err(SimJudgeError::NoItems);
        }
        if !(tie_margin >= 0.0) {
            return Err(SimJudgeError::InvalidTau(tie_margin));
        }
        let mut items = Vec::with_capacity(scores.len());
        let mut true_lambda = BTreeMap::new();
        for (id, lambda) in scores {
            if true_lambda.insert(id.clone(), lambda).is_some() {
                return Err(SimJudgeError::DuplicateItem(id));
            }
            items.push(id);
        }
        Ok(JudgeModel { items, true_lambda, tie_margin, noise, seed })
    }

    /// True scores drawn i.i.d. standard normal, in the given item order.
    pub fn standard_normal(
        ids: &[ItemId],
        tie_margin: f64,
        noise: Noise,
        seed: u64,
    ) -> Result<JudgeModel, SimJudgeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = ids
            .iter()
            .map(|id| (id.clone(), StandardNormal.sample(&mut rng)))
            .collect();
        JudgeModel::new(scores, tie_margin, noise, seed)
    }

    /// Two clusters `separation` apart (centers ±separation/2, within-cluster
    /// spread 0.25). Returns the model plus each item's high-cluster flag —
    /// the gold labels for classification checks.
    pub fn bimodal(
        ids: &[ItemId],
        separation: f64,
        tie_margin: f64,
        noise: Noise,
        seed: u64,
    ) -> Result<(JudgeModel, Vec<bool>), SimJudgeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut membership = Vec::with_capacity(ids.len());
        let mut scores = Vec::with_capacity(ids.len());
        for id in ids {
            let high: bool = rng.random();
            let center = if high { separation / 2.0 } else { -separation / 2.0 };
            let jitter: f64 = StandardNormal.sample(&mut rng);
            membership.push(high);
            scores.push((id.clone(), center + 0.25 * jitter));
        }
        Ok((JudgeModel::new(scores, tie_margin, noise, seed)?, membership))
    }

    /// Judge one matchup, first replay.
    pub fn judge(&self, first: &str, second: &str) -> Result<Outcome, SimJudgeError> {
        self.judge_nth(first, second, 0)
    }

    /// Judge the `draw`-th replay of a matchup. The randomness is keyed by
    /// the unordered pair, so swapping the presented order mirrors the
    /// outcome rather than re-rolling it.
    pub fn judge_nth(&self, first: &str, second: &str, draw: u64) -> Result<Outcome, SimJudgeError> {
        let lambda_first = self.lambda_of(first)?;
        let lambda_second = self.lambda_of(second)?;
        let delta = lambda_first - lambda_second;

        match self.noise {
            Noise::Deterministic => {
                if delta.abs() < self.tie_margin || delta == 0.0 {
                    Ok(Outcome::Tie)
                } else if delta > 0.0 {
                    Ok(Outcome::FirstWins)
                } else {
                    Ok(Outcome::SecondWins)
                }
            }
            Noise::Logistic => {
                let mut rng = self.pair_rng(first, second, draw);
                let u_tie: f64 = rng.random();
                let u_win: f64 = rng.random();
                let p_tie = if self.tie_margin > 0.0 {
                    (1.0 - delta.abs() / self.tie_margin).max(0.0)
                } else {
                    0.0
                };
                if u_tie < p_tie {
                    return Ok(Outcome::Tie);
                }
                // Decide for the lexicographically smaller id, then translate
                // back to presented positions: this is what keeps mirrored
                // calls consistent.
                let (lo, hi) = if first <= second { (first, second) } else { (second, first) };
                let p_lo = sigmoid(self.lambda_of(lo)? - self.lambda_of(hi)?);
                let lo_wins = u_win < p_lo;
                let first_is_lo = first == lo;
                if lo_wins == first_is_lo {
                    Ok(Outcome::FirstWins)
                } else {
                    Ok(Outcome::SecondWins)
                }
            }
        }
    }

    fn lambda_of(&self, id: &str) -> Result<f64, SimJudgeError> {
        self.true_lambda.get(id).copied().ok_or_else(|| SimJudgeError::UnknownItem(id.to_string()))
    }

    /// One RNG stream per (seed, unordered pair, draw index).
    fn pair_rng(&self, a: &str, b: &str, draw: u64) -> ChaCha8Rng {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(lo.as_bytes());
        hasher.update([0x1f]);
        hasher.update(hi.as_bytes());
        hasher.update([0x1f]);
        hasher.update(draw.to_le_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sample matchups at the largest budget, judge them once, and slice
/// nested prefixes per budget — smaller budgets are literal prefixes of
/// larger ones, so score differences across budgets isolate the budget
/// itself.
pub fn generate_budget_verdicts(
    model: &JudgeModel,
    budgets: &[usize],
    sampler_seed: u64,
    randomize_position: bool,
) -> Result<BTreeMap<usize, Vec<Verdict>>, SimJudgeError> {
    let &k_max = budgets.iter().max().ok_or(SimJudgeError::NoItems)?;
    let mut config = SamplerConfig::new(k_max, sampler_seed);
    config.randomize_position = randomize_position;
    let matchups = sample_matchups(&model.items, &config)?;

    let mut draw_counts: HashMap<(ItemId, ItemId), u64> = HashMap::new();
    let mut verdicts = Vec::with_capacity(matchups.len());
    for m in &matchups {
        let key = if m.first_id <= m.second_id {
            (m.first_id.clone(), m.second_id.clone())
        } else {
            (m.second_id.clone(), m.first_id.clone())
        };
        let draw = draw_counts.entry(key).or_insert(0);
        let outcome = model.judge_nth(&m.first_id, &m.second_id, *draw)?;
        *draw += 1;
        verdicts.push(Verdict {
            first_id: m.first_id.clone(),
            second_id: m.second_id.clone(),
            outcome,
            extraction_path: ExtractionPath::DirectParse,
            raw_reply: canonical_reply(outcome).to_string(),
        });
    }

    let n = model.items.len();
    let mut per_budget = BTreeMap::new();
    for &k in budgets {
        let count = n * k.min(n.saturating_sub(1));
        per_budget.insert(k, verdicts[..count].to_vec());
    }
    Ok(per_budget)
}

/// Constrained-form reply strings; they round-trip through the verdict
/// parser to the same outcome.
fn canonical_reply(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::FirstWins => "Tweet Description 1",
        Outcome::SecondWins => "Tweet Description 2",
        Outcome::Tie => "Tie.",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgcot::parse_verdict;

    fn item_ids(n: usize) -> Vec<ItemId> {
        (0..n).map(|i| format!("item_{i:03}")).collect()
    }

    fn fixed_model(noise: Noise, tau: f64) -> JudgeModel {
        JudgeModel::new(
            vec![("low".into(), -1.0), ("mid".into(), 0.0), ("high".into(), 1.0)],
            tau,
            noise,
            7,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_mode_orders_by_true_score() {
        let model = fixed_model(Noise::Deterministic, 0.0);
        assert_eq!(model.judge("high", "low").unwrap(), Outcome::FirstWins);
        assert_eq!(model.judge("low", "high").unwrap(), Outcome::SecondWins);
        assert_eq!(model.judge("mid", "low").unwrap(), Outcome::FirstWins);
        // Equal scores with no margin still tie rather than picking a side.
        let flat =
            JudgeModel::new(vec![("a".into(), 0.5), ("b".into(), 0.5)], 0.0, Noise::Deterministic, 1)
                .unwrap();
        assert_eq!(flat.judge("a", "b").unwrap(), Outcome::Tie);
    }

    #[test]
    fn margin_forces_ties_on_close_scores() {
        let model = fixed_model(Noise::Deterministic, 1.5);
        assert_eq!(model.judge("mid", "low").unwrap(), Outcome::Tie);
        assert_eq!(model.judge("high", "low").unwrap(), Outcome::FirstWins);

        let logistic = fixed_model(Noise::Logistic, 0.5);
        // Equal scores: p_tie = 1, every replay ties.
        let equal = JudgeModel::new(
            vec![("a".into(), 0.2), ("b".into(), 0.2)],
            0.5,
            Noise::Logistic,
            9,
        )
        .unwrap();
        for draw in 0..50 {
            assert_eq!(equal.judge_nth("a", "b", draw).unwrap(), Outcome::Tie);
        }
        // Far-apart scores: p_tie = 0, never a tie.
        for draw in 0..50 {
            assert_ne!(logistic.judge_nth("high", "low", draw).unwrap(), Outcome::Tie);
        }
    }

    #[test]
    fn swapped_presentation_mirrors_the_outcome() {
        let model = fixed_model(Noise::Logistic, 0.3);
        for (a, b) in [("low", "mid"), ("mid", "high"), ("low", "high")] {
            for draw in 0..200 {
                let forward = model.judge_nth(a, b, draw).unwrap();
                let backward = model.judge_nth(b, a, draw).unwrap();
                let mirrored = match forward {
                    Outcome::FirstWins => Outcome::SecondWins,
                    Outcome::SecondWins => Outcome::FirstWins,
                    Outcome::Tie => Outcome::Tie,
                };
                assert_eq!(backward, mirrored, "pair ({a}, {b}) draw {draw}");
            }
        }
    }

    #[test]
    fn replays_are_deterministic_but_vary_across_draws() {
        let model = fixed_model(Noise::Logistic, 0.0);
        let first: Vec<Outcome> =
            (0..100).map(|d| model.judge_nth("low", "mid", d).unwrap()).collect();
        let second: Vec<Outcome> =
            (0..100).map(|d| model.judge_nth("low", "mid", d).unwrap()).collect();
        assert_eq!(first, second);
        // Both outcomes appear across draws (Δ=1 keeps either side possible).
        assert!(first.iter().any(|o| *o == Outcome::FirstWins));
        assert!(first.iter().any(|o| *o == Outcome::SecondWins));
    }

    #[test]
    fn win_frequency_tracks_the_logistic_curve() {
        // Δ = 1.0, so the first item should win σ(1.0) ≈ 0.7311 of replays.
        let model = JudgeModel::new(
            vec![("strong".into(), 1.0), ("weak".into(), 0.0)],
            0.0,
            Noise::Logistic,
            13,
        )
        .unwrap();
        let wins = (0..10_000)
            .filter(|&d| model.judge_nth("strong", "weak", d).unwrap() == Outcome::FirstWins)
            .count();
        let freq = wins as f64 / 10_000.0;
        assert!((freq - 0.7310585786).abs() < 0.02, "empirical frequency {freq}");
    }

    #[test]
    fn unknown_items_and_bad_margins_are_rejected() {
        let model = fixed_model(Noise::Deterministic, 0.0);
        assert!(matches!(
            model.judge("low", "stranger"),
            Err(SimJudgeError::UnknownItem(id)) if id == "stranger"
        ));
        assert!(matches!(
            JudgeModel::new(vec![("a".into(), 0.0)], -0.1, Noise::Deterministic, 0),
            Err(SimJudgeError::InvalidTau(_))
        ));
        assert!(matches!(
            JudgeModel::new(
                vec![("a".into(), 0.0), ("a".into(), 1.0)],
                0.0,
                Noise::Deterministic,
                0
            ),
            Err(SimJudgeError::DuplicateItem(_))
        ));
    }

    #[test]
    fn generated_models_are_reproducible() {
        let ids = item_ids(20);
        let a = JudgeModel::standard_normal(&ids, 0.2, Noise::Logistic, 5).unwrap();
        let b = JudgeModel::standard_normal(&ids, 0.2, Noise::Logistic, 5).unwrap();
        assert_eq!(a.true_lambda, b.true_lambda);
        let c = JudgeModel::standard_normal(&ids, 0.2, Noise::Logistic, 6).unwrap();
        assert_ne!(a.true_lambda, c.true_lambda);

        let (bi, membership) = JudgeModel::bimodal(&ids, 2.0, 0.0, Noise::Logistic, 5).unwrap();
        assert_eq!(membership.len(), 20);
        for (id, &high) in bi.items.iter().zip(&membership) {
            let lambda = bi.true_lambda[id];
            // Centers at ±1 with 0.25 spread never cross zero in practice.
            assert_eq!(lambda > 0.0, high, "item {id} at {lambda}");
        }
    }

    #[test]
    fn budget_files_have_the_advertised_sizes_and_nest() {
        let ids = item_ids(500);
        let model = JudgeModel::standard_normal(&ids, 0.2, Noise::Logistic, 11).unwrap();
        let per_budget = generate_budget_verdicts(&model, &[5, 10, 15, 20], 42, true).unwrap();
        assert_eq!(per_budget[&5].len(), 2_500);
        assert_eq!(per_budget[&10].len(), 5_000);
        assert_eq!(per_budget[&15].len(), 7_500);
        assert_eq!(per_budget[&20].len(), 10_000);
        // Smaller budgets are literal prefixes of larger ones.
        let full = &per_budget[&20];
        for k in [5usize, 10, 15] {
            let slice = &per_budget[&k];
            assert_eq!(slice.as_slice(), &full[..slice.len()]);
        }
        for v in full {
            assert_ne!(v.first_id, v.second_id);
        }
    }

    #[test]
    fn minimal_dataset_and_reruns() {
        let ids = item_ids(2);
        let model = JudgeModel::standard_normal(&ids, 0.0, Noise::Deterministic, 3).unwrap();
        let once = generate_budget_verdicts(&model, &[1], 8, true).unwrap();
        assert_eq!(once[&1].len(), 2);
        let twice = generate_budget_verdicts(&model, &[1], 8, true).unwrap();
        let a = serde_json::to_string(&once[&1]).unwrap();
        let b = serde_json::to_string(&twice[&1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn emitted_replies_reparse_to_the_same_outcome() {
        let ids = item_ids(12);
        let model = JudgeModel::standard_normal(&ids, 0.3, Noise::Logistic, 17).unwrap();
        let verdicts = generate_budget_verdicts(&model, &[3], 21, true).unwrap();
        for v in &verdicts[&3] {
            assert_eq!(parse_verdict(&v.raw_reply), Some(v.outcome));
        }
    }
}
