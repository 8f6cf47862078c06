//! Entity distributions, reverse indexes and long-tail diagnostics.

mod diagnostics;
mod graph;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::DataInstance;
use crate::entity::{EntityKey, Perspective};
use crate::error::{Error, Result};

pub use diagnostics::{
    cumulative_error_curve, location_stats, mean_rank, tail_half_coverage, ErrorCurve, LocationStats, TailCoverage,
};
pub use graph::{export_cooccurrence_graph, CoOccurrenceGraph, GraphEdge};
pub use persist::{read_distribution, read_index, write_index, IndexRecord};

/// Occurrence counts for one perspective with a deterministic rank order
/// (count descending, key ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDistribution {
    perspective: Perspective,
    counts: BTreeMap<EntityKey, u64>,
    rank_order: Vec<EntityKey>,
    ranks: HashMap<EntityKey, usize>,
}

impl EntityDistribution {
    pub fn from_counts(perspective: Perspective, counts: BTreeMap<EntityKey, u64>) -> Self {
        let mut counts = counts;
        counts.retain(|_, c| *c > 0);
        let mut rank_order: Vec<EntityKey> = counts.keys().cloned().collect();
        rank_order.sort_by(|a, b| counts[b].cmp(&counts[a]).then_with(|| a.cmp(b)));
        let ranks = rank_order.iter().enumerate().map(|(i, k)| (k.clone(), i + 1)).collect();
        EntityDistribution {
            perspective,
            counts,
            rank_order,
            ranks,
        }
    }

    pub fn perspective(&self) -> Perspective {
        self.perspective
    }

    pub fn counts(&self) -> &BTreeMap<EntityKey, u64> {
        &self.counts
    }

    pub fn count(&self, e: &EntityKey) -> u64 {
        self.counts.get(e).copied().unwrap_or(0)
    }

    pub fn rank_order(&self) -> &[EntityKey] {
        &self.rank_order
    }

    pub fn len(&self) -> usize {
        self.rank_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank_order.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// 1-based rank, `None` for entities absent from the distribution.
    pub fn rank(&self, e: &EntityKey) -> Option<usize> {
        self.ranks.get(e).copied()
    }

    /// Rank used for evaluation entities: unseen entities sit just past the
    /// tail at `len() + 1`.
    pub fn rank_or_sentinel(&self, e: &EntityKey) -> usize {
        self.rank(e).unwrap_or(self.sentinel_rank())
    }

    pub fn sentinel_rank(&self) -> usize {
        self.len() + 1
    }

    /// Associative, commutative merge of shard distributions.
    pub fn merge(&self, other: &EntityDistribution) -> Result<EntityDistribution> {
        if self.perspective != other.perspective {
            return Err(Error::data("cannot merge distributions of different perspectives"));
        }
        let mut counts = self.counts.clone();
        for (k, c) in &other.counts {
            *counts.entry(k.clone()).or_default() += c;
        }
        Ok(Self::from_counts(self.perspective, counts))
    }

    /// `(rank, count)` pairs head to tail.
    pub fn rank_frequency(&self) -> Vec<(usize, u64)> {
        self.rank_order
            .iter()
            .enumerate()
            .map(|(i, k)| (i + 1, self.counts[k]))
            .collect()
    }
}

/// Counts, per entity, the instances whose set contains it.
pub fn build_distribution<'a, I>(corpus: I, perspective: Perspective) -> Result<EntityDistribution>
where
    I: IntoIterator<Item = &'a DataInstance>,
{
    let mut counts: BTreeMap<EntityKey, u64> = BTreeMap::new();
    for inst in corpus {
        for e in inst.entities_for(perspective)? {
            *counts.entry(e.clone()).or_default() += 1;
        }
    }
    Ok(EntityDistribution::from_counts(perspective, counts))
}

/// Entity → ids of the instances containing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReverseIndex {
    pub perspective: Perspective,
    pub postings: BTreeMap<EntityKey, BTreeSet<String>>,
    /// Number of instances indexed, including those with no entities.
    pub corpus_size: usize,
}

impl ReverseIndex {
    pub fn new(perspective: Perspective) -> Self {
        ReverseIndex {
            perspective,
            postings: BTreeMap::new(),
            corpus_size: 0,
        }
    }

    pub fn perspective(&self) -> Perspective {
        self.perspective
    }

    pub fn add(&mut self, inst: &DataInstance) -> Result<()> {
        for e in inst.entities_for(self.perspective())? {
            self.postings.entry(e.clone()).or_default().insert(inst.id.clone());
        }
        self.corpus_size += 1;
        Ok(())
    }

    /// Posting size `N_e`; zero for unknown entities.
    pub fn n_e(&self, e: &EntityKey) -> usize {
        self.postings.get(e).map_or(0, BTreeSet::len)
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn n_e_map(&self) -> BTreeMap<EntityKey, u64> {
        self.postings.iter().map(|(k, v)| (k.clone(), v.len() as u64)).collect()
    }

    pub fn total_postings(&self) -> u64 {
        self.postings.values().map(|v| v.len() as u64).sum()
    }

    pub fn distribution(&self) -> EntityDistribution {
        EntityDistribution::from_counts(self.perspective(), self.n_e_map())
    }

    /// Union of two shard indexes.
    pub fn merge(&self, other: &ReverseIndex) -> Result<ReverseIndex> {
        if self.perspective() != other.perspective() {
            return Err(Error::data("cannot merge indexes of different perspectives"));
        }
        let mut out = self.clone();
        for (k, ids) in &other.postings {
            out.postings.entry(k.clone()).or_default().extend(ids.iter().cloned());
        }
        out.corpus_size += other.corpus_size;
        Ok(out)
    }
}

pub fn build_reverse_index<'a, I>(corpus: I, perspective: Perspective) -> Result<ReverseIndex>
where
    I: IntoIterator<Item = &'a DataInstance>,
{
    let mut idx = ReverseIndex::new(perspective);
    for inst in corpus {
        idx.add(inst)?;
    }
    Ok(idx)
}

/// Which entities count as tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailCut {
    /// Tail ⟺ `N_e ≤ tau`.
    Frequency(u64),
    /// Tail ⟺ rank `> position`.
    Rank(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailThreshold {
    pub perspective: Perspective,
    pub tau: u64,
}

impl TailThreshold {
    pub fn new(perspective: Perspective, tau: u64) -> Result<Self> {
        if tau == 0 {
            return Err(Error::usage(format!("tau for {perspective} must be at least 1")));
        }
        Ok(TailThreshold { perspective, tau })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub perspective: Perspective,
    pub cut: TailCut,
    pub pct_tail_entities: f64,
    pub pct_tail_instances: f64,
    pub tail_entities: usize,
    pub entities: usize,
    pub tail_instances: usize,
    pub corpus_size: usize,
}

/// Share of tail entities and of instances touched by at least one tail
/// entity.
pub fn tail_report(index: &ReverseIndex, cut: TailCut) -> Result<TailReport> {
    if index.is_empty() || index.corpus_size == 0 {
        return Err(Error::data(format!("{} index is empty", index.perspective())));
    }
    if cut == TailCut::Frequency(0) {
        return Err(Error::usage("tau must be at least 1"));
    }
    let ranked = matches!(cut, TailCut::Rank(_)).then(|| index.distribution());
    let is_tail = |e: &EntityKey, n: usize| match cut {
        TailCut::Frequency(tau) => n as u64 <= tau,
        TailCut::Rank(pos) => ranked.as_ref().and_then(|d| d.rank(e)).is_some_and(|r| r > pos),
    };
    let mut tail_entities = 0usize;
    let mut touched: BTreeSet<&str> = BTreeSet::new();
    for (e, ids) in &index.postings {
        if is_tail(e, ids.len()) {
            tail_entities += 1;
            touched.extend(ids.iter().map(String::as_str));
        }
    }
    Ok(TailReport {
        perspective: index.perspective(),
        cut,
        pct_tail_entities: 100.0 * tail_entities as f64 / index.len() as f64,
        pct_tail_instances: 100.0 * touched.len() as f64 / index.corpus_size as f64,
        tail_entities,
        entities: index.len(),
        tail_instances: touched.len(),
        corpus_size: index.corpus_size,
    })
}

/// Nearest-rank percentile of the `N_e` values (`q` in `[0, 100]`).
pub fn frequency_at_percentile(index: &ReverseIndex, q: f64) -> Option<u64> {
    let mut n: Vec<u64> = index.postings.values().map(|v| v.len() as u64).collect();
    if n.is_empty() {
        return None;
    }
    n.sort_unstable();
    let q = q.clamp(0.0, 100.0);
    let pos = ((q / 100.0) * n.len() as f64).ceil() as usize;
    Some(n[pos.clamp(1, n.len()) - 1])
}
