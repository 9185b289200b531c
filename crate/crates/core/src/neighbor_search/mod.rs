//! Sharded approximate top-k regularizer search.
//!
//! Every unlabeled candidate is scored against the whole labeled index
//! (map), only its `k_m` best labeled matches are emitted, emissions are
//! grouped by labeled id (shuffle), and each labeled id keeps its `k_r` best
//! unlabeled matches (reduce). A labeled sample can therefore miss its true
//! nearest neighbor when that neighbor has `k_m` closer labeled samples.
//!
//! All rankings use score descending with ascending id as tie-break, so the
//! output is independent of shard count and shard completion order.

mod topk;

pub use topk::{Ranked, TopKAccumulator};

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::embedding::{unit_dot, Corpus, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::mil_pooling::LabelVector;
use crate::scalar::Scalar;

pub const DEFAULT_KM: usize = 1000;
pub const DEFAULT_KR: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k_m: usize,
    pub k_r: usize,
    pub shard_count: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k_m: DEFAULT_KM,
            k_r: DEFAULT_KR,
            shard_count: 1,
        }
    }
}

impl SearchParams {
    pub fn new(k_m: usize, k_r: usize, shard_count: usize) -> Result<Self> {
        let p = Self {
            k_m,
            k_r,
            shard_count,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_m == 0 || self.k_r == 0 || self.shard_count == 0 {
            return Err(Error::InvalidParams(format!(
                "k_m, k_r and shard_count must be positive (got {}, {}, {})",
                self.k_m, self.k_r, self.shard_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborMatch {
    pub labeled_id: u64,
    pub unlabeled_id: u64,
    pub score: f64,
}

/// Per labeled id, its retained matches best first. Every labeled id of the
/// query corpus has an entry, possibly empty.
pub type Neighbors = BTreeMap<u64, Vec<NeighborMatch>>;

/// An unlabeled sample that inherits a labeled sample's full label vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegularizedSample {
    pub features_source_id: u64,
    pub donor_id: u64,
    pub labels: LabelVector,
}

fn check_dims<T: Scalar>(labeled: &Corpus<T>, unlabeled: &Corpus<T>) -> Result<()> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if labeled.dim() != unlabeled.dim() {
        return Err(Error::DimensionMismatch {
            expected: labeled.dim(),
            found: unlabeled.dim(),
        });
    }
    Ok(())
}

/// Scores one unlabeled candidate against every labeled record and emits its
/// `min(k_m, |labeled|)` best matches, best first.
pub fn map_phase<T: Scalar>(
    candidate: &EmbeddingRecord<T>,
    labeled_index: &[EmbeddingRecord<T>],
    k_m: usize,
) -> Result<Vec<NeighborMatch>> {
    if labeled_index.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k_m == 0 {
        return Err(Error::InvalidParams("k_m must be positive".into()));
    }
    let mut acc = TopKAccumulator::new(k_m.min(labeled_index.len()));
    for l in labeled_index {
        if l.dim() != candidate.dim() {
            return Err(Error::DimensionMismatch {
                expected: l.dim(),
                found: candidate.dim(),
            });
        }
        acc.push(unit_dot(candidate.values(), l.values()), l.id);
    }
    Ok(acc
        .into_sorted_vec()
        .into_iter()
        .map(|r| NeighborMatch {
            labeled_id: r.id,
            unlabeled_id: candidate.id,
            score: r.score,
        })
        .collect())
}

/// Keeps the `k_r` best matches of one labeled id, ranked by score then
/// unlabeled id. Arrival order of `matches` does not affect the result.
pub fn reduce_phase<I>(labeled_id: u64, matches: I, k_r: usize) -> Result<Vec<NeighborMatch>>
where
    I: IntoIterator<Item = NeighborMatch>,
{
    if k_r == 0 {
        return Err(Error::InvalidParams("k_r must be positive".into()));
    }
    let mut acc = TopKAccumulator::new(k_r);
    for m in matches {
        if m.labeled_id != labeled_id {
            return Err(Error::KeyViolation {
                expected: labeled_id,
                found: m.labeled_id,
            });
        }
        acc.push(m.score, m.unlabeled_id);
    }
    Ok(acc
        .into_sorted_vec()
        .into_iter()
        .map(|r| NeighborMatch {
            labeled_id,
            unlabeled_id: r.id,
            score: r.score,
        })
        .collect())
}

/// Emissions of one shard after local combining: per labeled id, the shard's
/// best `k_r` matches. Combining is exact because top-k of a union equals
/// top-k of the union of per-part top-k.
#[derive(Debug, Clone, Default)]
pub struct ShardEmissions {
    pub by_labeled: BTreeMap<u64, Vec<NeighborMatch>>,
    /// Raw map-phase emission count before combining.
    pub emitted: usize,
}

/// Runs the map phase over one shard of candidates.
pub fn map_shard<T: Scalar>(
    shard: &[EmbeddingRecord<T>],
    labeled_index: &[EmbeddingRecord<T>],
    params: &SearchParams,
) -> Result<ShardEmissions> {
    let mut combiners: BTreeMap<u64, TopKAccumulator> = BTreeMap::new();
    let mut emitted = 0;
    for candidate in shard {
        for m in map_phase(candidate, labeled_index, params.k_m)? {
            emitted += 1;
            combiners
                .entry(m.labeled_id)
                .or_insert_with(|| TopKAccumulator::new(params.k_r))
                .push(m.score, m.unlabeled_id);
        }
    }
    let by_labeled = combiners
        .into_iter()
        .map(|(lid, acc)| {
            let v = acc
                .into_sorted_vec()
                .into_iter()
                .map(|r| NeighborMatch {
                    labeled_id: lid,
                    unlabeled_id: r.id,
                    score: r.score,
                })
                .collect();
            (lid, v)
        })
        .collect();
    Ok(ShardEmissions {
        by_labeled,
        emitted,
    })
}

/// Groups shard emissions by labeled id and reduces each group.
pub fn shuffle_reduce<I>(labeled_ids: &[u64], shards: I, k_r: usize) -> Result<Neighbors>
where
    I: IntoIterator<Item = ShardEmissions>,
{
    let mut groups: BTreeMap<u64, Vec<NeighborMatch>> =
        labeled_ids.iter().map(|&id| (id, Vec::new())).collect();
    for shard in shards {
        for (lid, matches) in shard.by_labeled {
            groups.entry(lid).or_default().extend(matches);
        }
    }
    groups
        .into_iter()
        .map(|(lid, ms)| reduce_phase(lid, ms, k_r).map(|r| (lid, r)))
        .collect()
}

/// Contiguous shard boundaries for `n` items.
pub fn shard_ranges(n: usize, shard_count: usize) -> Vec<std::ops::Range<usize>> {
    (0..shard_count)
        .map(|s| (s * n / shard_count)..((s + 1) * n / shard_count))
        .collect()
}

fn worker_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    hw.min(jobs).max(1)
}

/// Distributed search: shards of `unlabeled` are mapped on worker threads,
/// then a single deterministic shuffle/reduce builds the result.
pub fn search<T: Scalar>(
    labeled: &Corpus<T>,
    unlabeled: &Corpus<T>,
    params: &SearchParams,
) -> Result<Neighbors> {
    params.validate()?;
    check_dims(labeled, unlabeled)?;
    let ranges = shard_ranges(unlabeled.len(), params.shard_count);
    let slots: Vec<Mutex<Option<Result<ShardEmissions>>>> =
        ranges.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(ranges.len()) {
            scope.spawn(|| loop {
                let s = next.fetch_add(1, Ordering::Relaxed);
                let Some(range) = ranges.get(s) else { break };
                let out = map_shard(&unlabeled.records()[range.clone()], labeled.records(), params);
                *slots[s].lock().unwrap() = Some(out);
            });
        }
    });
    let shards = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every shard is mapped"))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = labeled.records().iter().map(|r| r.id).collect();
    shuffle_reduce(&ids, shards, params.k_r)
}

/// Exhaustive per-labeled-sample scan; the oracle for [`search`].
pub fn exact_search<T: Scalar>(
    labeled: &Corpus<T>,
    unlabeled: &Corpus<T>,
    k_r: usize,
) -> Result<Neighbors> {
    if k_r == 0 {
        return Err(Error::InvalidParams("k_r must be positive".into()));
    }
    check_dims(labeled, unlabeled)?;
    let records = labeled.records();
    let chunks = shard_ranges(records.len(), worker_count(records.len()));
    let parts: Vec<Vec<(u64, Vec<NeighborMatch>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|range| {
                scope.spawn(move || {
                    records[range.clone()]
                        .iter()
                        .map(|l| {
                            let mut acc = TopKAccumulator::new(k_r);
                            for u in unlabeled.records() {
                                acc.push(unit_dot(u.values(), l.values()), u.id);
                            }
                            let v = acc
                                .into_sorted_vec()
                                .into_iter()
                                .map(|r| NeighborMatch {
                                    labeled_id: l.id,
                                    unlabeled_id: r.id,
                                    score: r.score,
                                })
                                .collect();
                            (l.id, v)
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Fraction of the oracle's matches that the approximate result recovered.
pub fn recall(approx: &Neighbors, exact: &Neighbors) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (lid, truth) in exact {
        let got: HashSet<u64> = approx
            .get(lid)
            .map(|v| v.iter().map(|m| m.unlabeled_id).collect())
            .unwrap_or_default();
        total += truth.len();
        hit += truth.iter().filter(|m| got.contains(&m.unlabeled_id)).count();
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Gives each labeled sample's top `take` matches its label vector.
/// Identical `(unlabeled id, labels)` pairs are emitted once.
pub fn transfer_labels(
    matches: &Neighbors,
    labeled_labels: &BTreeMap<u64, LabelVector>,
    take: usize,
) -> Result<Vec<RegularizedSample>> {
    if take == 0 {
        return Err(Error::InvalidParams("take must be >= 1".into()));
    }
    let mut seen: HashSet<(u64, LabelVector)> = HashSet::new();
    let mut out = Vec::new();
    for (&lid, list) in matches {
        if list.is_empty() {
            continue;
        }
        let labels = labeled_labels.get(&lid).ok_or(Error::MissingLabels(lid))?;
        for m in list.iter().take(take) {
            if seen.insert((m.unlabeled_id, labels.clone())) {
                out.push(RegularizedSample {
                    features_source_id: m.unlabeled_id,
                    donor_id: lid,
                    labels: labels.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Flattens a result into `(labeled_id, rank)` order.
pub fn flatten(neighbors: &Neighbors) -> Vec<NeighborMatch> {
    neighbors.values().flatten().copied().collect()
}
