use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EntityDistribution, ReverseIndex};
use crate::dataset::EvalCase;
use crate::entity::{EntitySet, Perspective};
use crate::error::{Error, Result};

/// Mean 1-based rank of the entities, unseen ones at the sentinel rank.
/// `None` for an empty set.
pub fn mean_rank(entities: &EntitySet, dist: &EntityDistribution) -> Option<f64> {
    if entities.is_empty() {
        return None;
    }
    let sum: usize = entities.iter().map(|e| dist.rank_or_sentinel(e)).sum();
    Some(sum as f64 / entities.len() as f64)
}

fn case_entities(case: &EvalCase, p: Perspective) -> Option<&EntitySet> {
    case.entities.get(&p)
}

/// Share of failures explained by walking the distribution head to tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub perspective: Perspective,
    /// `(rank / len, cumulative fraction of covered failures)`.
    pub points: Vec<(f64, f64)>,
    pub covered: usize,
    /// Failed cases with no entity in the distribution.
    pub excluded: usize,
}

pub fn cumulative_error_curve(cases: &[EvalCase], dist: &EntityDistribution) -> ErrorCurve {
    let p = dist.perspective();
    let len = dist.len();
    let mut at_rank = vec![0usize; len + 1];
    let mut covered = 0;
    let mut excluded = 0;
    for case in cases.iter().filter(|c| !c.correct) {
        let min = case_entities(case, p)
            .into_iter()
            .flatten()
            .filter_map(|e| dist.rank(e))
            .min();
        match min {
            Some(r) => {
                at_rank[r] += 1;
                covered += 1;
            }
            None => excluded += 1,
        }
    }
    let mut acc = 0usize;
    let points = (1..=len)
        .map(|r| {
            acc += at_rank[r];
            let y = if covered == 0 { 0.0 } else { acc as f64 / covered as f64 };
            (r as f64 / len as f64, y)
        })
        .collect();
    ErrorCurve {
        perspective: p,
        points,
        covered,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationStats {
    pub perspective: Perspective,
    pub max_rank: usize,
    pub min_rank: usize,
    pub mean_rank: f64,
    pub cases: usize,
    pub occurrences: usize,
    /// Occurrences of entities absent from the distribution, placed at the
    /// sentinel rank.
    pub unseen: usize,
}

/// Max/min/mean rank over every entity occurrence in `cases`.
pub fn location_stats<'a, I>(cases: I, dist: &EntityDistribution) -> Result<LocationStats>
where
    I: IntoIterator<Item = &'a EvalCase>,
{
    let p = dist.perspective();
    let mut n_cases = 0usize;
    let mut ranks: Vec<usize> = Vec::new();
    let mut unseen = 0usize;
    for case in cases {
        n_cases += 1;
        for e in case_entities(case, p).into_iter().flatten() {
            let r = dist.rank_or_sentinel(e);
            if dist.rank(e).is_none() {
                unseen += 1;
            }
            ranks.push(r);
        }
    }
    if n_cases == 0 {
        return Err(Error::data("location stats over an empty case set"));
    }
    if ranks.is_empty() {
        return Err(Error::data(format!("no {p} entities in the case set")));
    }
    Ok(LocationStats {
        perspective: p,
        max_rank: *ranks.iter().max().unwrap_or(&0),
        min_rank: *ranks.iter().min().unwrap_or(&0),
        mean_rank: ranks.iter().sum::<usize>() as f64 / ranks.len() as f64,
        cases: n_cases,
        occurrences: ranks.len(),
        unseen,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCoverage {
    pub perspective: Perspective,
    /// Smallest mean rank among the selected cases; training entities at
    /// or past this rank are counted as covered.
    pub threshold_rank: f64,
    pub pct_entities: f64,
    pub pct_instances: f64,
    pub selected: Vec<String>,
}

/// Takes the tail `fraction` of failed cases by mean entity rank and
/// measures how much of the training index lies at or beyond them.
pub fn tail_half_coverage(cases: &[EvalCase], index: &ReverseIndex, fraction: f64) -> Result<TailCoverage> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::usage(format!("fraction {fraction} outside (0, 1]")));
    }
    if index.is_empty() || index.corpus_size == 0 {
        return Err(Error::data("tail coverage over an empty index"));
    }
    let dist = index.distribution();
    let p = index.perspective();
    let mut scored: Vec<(f64, &str)> = cases
        .iter()
        .filter(|c| !c.correct)
        .filter_map(|c| Some((mean_rank(case_entities(c, p)?, &dist)?, c.case_id.as_str())))
        .collect();
    if scored.is_empty() {
        return Err(Error::data("no failed cases with entities"));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let take = ((fraction * scored.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let selected = &scored[..take.min(scored.len())];
    let threshold_rank = selected.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let mut tail_entities = 0usize;
    let mut touched: BTreeSet<&str> = BTreeSet::new();
    for (i, e) in dist.rank_order().iter().enumerate() {
        if (i + 1) as f64 >= threshold_rank {
            tail_entities += 1;
            touched.extend(index.postings[e].iter().map(String::as_str));
        }
    }
    Ok(TailCoverage {
        perspective: p,
        threshold_rank,
        pct_entities: 100.0 * tail_entities as f64 / dist.len() as f64,
        pct_instances: 100.0 * touched.len() as f64 / index.corpus_size as f64,
        selected: selected.iter().map(|s| s.1.to_owned()).collect(),
    })
}
