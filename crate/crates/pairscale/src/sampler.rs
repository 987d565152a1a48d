//! Seeded matchup sampling: k opponents per focal item.
//!
//! Each focal id gets its own deterministic RNG substream (derived from the
//! global seed and the id itself), opponents are drawn without replacement,
//! and matchups are emitted round-major — every id's first draw, then every
//! id's second draw, and so on. Two consequences worth knowing:
//!
//! - the output is a pure function of `(ids, config)`, independent of
//!   threading or platform;
//! - for the same seed, a smaller budget is literally a prefix of a larger
//!   one (`k = 5` emits the first `5·n` records of the `k = 20` run), which
//!   is what makes budget-comparison experiments nested rather than merely
//!   resampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ItemId;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("need at least 2 items to form matchups, got {0}")]
    TooFewItems(usize),
    #[error("k_per_id must be at least 1")]
    ZeroBudget,
}

/// An ordered pair of items put to the judge. Order matters: the first id is
/// presented as description 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matchup {
    pub first_id: ItemId,
    pub second_id: ItemId,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Matchups per focal id, capped at n−1 when the corpus is small.
    pub k_per_id: usize,
    pub seed: u64,
    /// When set (the default), a coin flip per matchup decides whether the
    /// focal item appears first or second, hedging against judge position
    /// bias. When unset the focal item is always first.
    pub randomize_position: bool,
}

impl SamplerConfig {
    pub fn new(k_per_id: usize, seed: u64) -> Self {
        SamplerConfig { k_per_id, seed, randomize_position: true }
    }
}

/// Number of distinct unordered pairs the sample is drawn against: C(n, 2).
pub fn possible_matchups(n: usize) -> u64 {
    (n as u64) * (n as u64 - 1) / 2
}

/// One RNG stream per focal id, independent of every other id's stream.
fn focal_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Sample `min(k_per_id, n−1)` distinct opponents for every focal id and
/// emit the matchups round-major. Repeated unordered pairs across different
/// focal ids are allowed by design — they are independent judgments.
pub fn sample_matchups(
    ids: &[ItemId],
    config: &SamplerConfig,
) -> Result<Vec<Matchup>, SamplerError> {
    if ids.len() < 2 {
        return Err(SamplerError::TooFewItems(ids.len()));
    }
    if config.k_per_id == 0 {
        return Err(SamplerError::ZeroBudget);
    }
    let k = config.k_per_id.min(ids.len() - 1);

    // Draw each focal id's full schedule first. The position bit is drawn
    // right after its opponent regardless of `randomize_position`, so the
    // opponent sequence never depends on that flag, and draw r never depends
    // on k — that is what makes smaller budgets prefixes of larger ones.
    let mut schedules: Vec<Vec<(usize, bool)>> = Vec::with_capacity(ids.len());
    for (focal, id) in ids.iter().enumerate() {
        let mut rng = focal_rng(config.seed, id);
        let mut remaining: Vec<usize> =
            (0..ids.len()).filter(|&other| other != focal).collect();
        let mut schedule = Vec::with_capacity(k);
        for _ in 0..k {
            let pick = rng.random_range(0..remaining.len());
            let opponent = remaining.swap_remove(pick);
            let focal_second = rng.random::<bool>();
            schedule.push((opponent, focal_second));
        }
        schedules.push(schedule);
    }

    let mut matchups = Vec::with_capacity(ids.len() * k);
    for round in 0..k {
        for (focal, schedule) in schedules.iter().enumerate() {
            let (opponent, focal_second) = schedule[round];
            let (first, second) = if config.randomize_position && focal_second {
                (opponent, focal)
            } else {
                (focal, opponent)
            };
            matchups.push(Matchup {
                first_id: ids[first].clone(),
                second_id: ids[second].clone(),
            });
        }
    }
    Ok(matchups)
}
