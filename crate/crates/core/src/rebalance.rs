//! Data rebalancing: per-entity sampling probabilities and the pass-count
//! resampling rule.
//!
//! An instance passes a perspective when one of its entities (visited in
//! key order) is sampled with probability `min(1, tau / N_e)`. It is kept
//! when strictly more than `n_p` perspectives pass and a final draw falls
//! below `alpha`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DataInstance;
use crate::distribution::ReverseIndex;
use crate::entity::{EntityKey, Perspective};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Probability;

/// `raw_p = tau / N_e` for every entity of one perspective. Values above
/// one are kept; sampling clamps them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDictionary<S> {
    pub perspective: Perspective,
    pub tau: u64,
    raw: BTreeMap<EntityKey, S>,
}

impl<S: Probability> ProbabilityDictionary<S> {
    pub fn build(index: &ReverseIndex, tau: u64) -> Result<Self> {
        if tau == 0 {
            return Err(Error::usage("tau must be at least 1"));
        }
        if index.is_empty() {
            return Err(Error::data(format!("{} index is empty", index.perspective())));
        }
        let raw = index
            .postings
            .iter()
            .map(|(e, ids)| (e.clone(), S::from_ratio(tau, ids.len() as u64)))
            .collect();
        Ok(ProbabilityDictionary {
            perspective: index.perspective(),
            tau,
            raw,
        })
    }

    pub fn raw_p(&self, e: &EntityKey) -> Option<&S> {
        self.raw.get(e)
    }

    /// Clamped sampling probability; unknown entities are treated as tail.
    pub fn sample_p(&self, e: &EntityKey) -> S {
        self.raw.get(e).cloned().map_or_else(S::one, S::min_one)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityKey, &S)> {
        self.raw.iter()
    }
}

/// One dictionary per perspective.
pub type ProbabilityDicts<S> = BTreeMap<Perspective, ProbabilityDictionary<S>>;

pub fn build_probability_dicts<S: Probability>(
    indexes: &BTreeMap<Perspective, ReverseIndex>,
    taus: &BTreeMap<Perspective, u64>,
) -> Result<ProbabilityDicts<S>> {
    let mut out = BTreeMap::new();
    for (p, idx) in indexes {
        let tau = *taus
            .get(p)
            .ok_or_else(|| Error::usage(format!("no tau given for {p}")))?;
        if idx.is_empty() {
            continue;
        }
        out.insert(*p, ProbabilityDictionary::build(idx, tau)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceConfig {
    pub n_p: usize,
    pub alpha: f64,
    pub seed: u64,
    pub perspectives: Vec<Perspective>,
}

impl RebalanceConfig {
    pub fn new(n_p: usize, alpha: f64, seed: u64) -> Self {
        RebalanceConfig {
            n_p,
            alpha,
            seed,
            perspectives: Perspective::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.perspectives.is_empty() {
            return Err(Error::usage("no active perspectives"));
        }
        if self.n_p >= self.perspectives.len() {
            return Err(Error::usage(format!(
                "n_p = {} must be below the number of active perspectives ({})",
                self.n_p,
                self.perspectives.len()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::usage(format!("alpha = {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Walks the perspective's entities in key order and passes on the first
/// draw `u < sample_p`. Returns the outcome and the number of entities that
/// were missing from the dictionary.
pub fn perspective_pass<S: Probability, R: Rng + ?Sized>(
    inst: &DataInstance,
    dict: &ProbabilityDictionary<S>,
    rng: &mut R,
) -> Result<(bool, usize)> {
    let mut missing = 0;
    for e in inst.entities_for(dict.perspective)? {
        if dict.raw_p(e).is_none() {
            missing += 1;
        }
        let u: f64 = rng.gen();
        if u < dict.sample_p(e).to_f64_lossy() {
            return Ok((true, missing));
        }
    }
    Ok((false, missing))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub keep: bool,
    /// Pass outcome per active perspective, in config order.
    pub passes: [Option<bool>; 4],
    pub missing: usize,
}

impl Decision {
    pub fn pass_count(&self) -> usize {
        self.passes.iter().filter(|p| **p == Some(true)).count()
    }
}

/// Immutable rebalancing context shared across workers.
#[derive(Debug, Clone)]
pub struct Rebalancer<'a, S> {
    dicts: &'a ProbabilityDicts<S>,
    config: RebalanceConfig,
}

impl<'a, S: Probability> Rebalancer<'a, S> {
    pub fn new(dicts: &'a ProbabilityDicts<S>, config: RebalanceConfig) -> Result<Self> {
        config.validate()?;
        for p in &config.perspectives {
            if !dicts.contains_key(p) {
                return Err(Error::usage(format!("no probability dictionary for {p}")));
            }
        }
        Ok(Rebalancer { dicts, config })
    }

    pub fn config(&self) -> &RebalanceConfig {
        &self.config
    }

    /// Keep decision from the instance's own keyed streams.
    pub fn decide(&self, inst: &DataInstance) -> Result<Decision> {
        self.decide_with_seed(inst, self.config.seed)
    }

    pub fn decide_with_seed(&self, inst: &DataInstance, seed: u64) -> Result<Decision> {
        let mut passes = [None; 4];
        let mut missing = 0;
        for p in &self.config.perspectives {
            let mut r = rng::stream(seed, &inst.id, p.as_str());
            let (ok, m) = perspective_pass(inst, &self.dicts[p], &mut r)?;
            passes[p.index()] = Some(ok);
            missing += m;
        }
        let count = passes.iter().filter(|p| **p == Some(true)).count();
        let keep = count > self.config.n_p && {
            let u: f64 = rng::stream(seed, &inst.id, "alpha").gen();
            u < self.config.alpha
        };
        Ok(Decision { keep, passes, missing })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PassStats {
    pub evaluated: usize,
    pub passed: usize,
}

impl PassStats {
    pub fn rate(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.passed as f64 / self.evaluated as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceResult {
    /// Ids of the core set, in corpus order.
    pub kept: Vec<String>,
    pub total: usize,
    pub per_perspective: BTreeMap<Perspective, PassStats>,
    pub missing_entities: usize,
}

impl RebalanceResult {
    pub fn retention_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.total as f64
        }
    }
}

/// Decides every instance on `pool`; the result is independent of the
/// thread count.
pub fn rebalance<S: Probability>(
    corpus: &[DataInstance],
    rebalancer: &Rebalancer<'_, S>,
    pool: &rayon::ThreadPool,
) -> Result<RebalanceResult> {
    let decisions: Vec<Decision> =
        pool.install(|| corpus.par_iter().map(|i| rebalancer.decide(i)).collect::<Result<_>>())?;
    let mut per_perspective: BTreeMap<Perspective, PassStats> = rebalancer
        .config
        .perspectives
        .iter()
        .map(|p| (*p, PassStats::default()))
        .collect();
    let mut kept = Vec::new();
    let mut missing = 0;
    for (inst, d) in corpus.iter().zip(&decisions) {
        for (p, stats) in per_perspective.iter_mut() {
            if let Some(ok) = d.passes[p.index()] {
                stats.evaluated += 1;
                stats.passed += usize::from(ok);
            }
        }
        missing += d.missing;
        if d.keep {
            kept.push(inst.id.clone());
        }
    }
    Ok(RebalanceResult {
        kept,
        total: corpus.len(),
        per_perspective,
        missing_entities: missing,
    })
}

/// Probability that one perspective passes: `1 − Π(1 − sample_p)`.
pub fn perspective_pass_probability<S: Probability>(inst: &DataInstance, dict: &ProbabilityDictionary<S>) -> Result<S> {
    let mut fail = S::one();
    for e in inst.entities_for(dict.perspective)? {
        fail = fail * (S::one() - dict.sample_p(e));
    }
    Ok(S::one() - fail)
}

/// Exact keep probability: enumerate the pass/fail outcomes of the active
/// perspectives and sum those with more than `n_p` passes, times `alpha`.
pub fn retention_oracle<S: Probability>(
    inst: &DataInstance,
    dicts: &ProbabilityDicts<S>,
    config: &RebalanceConfig,
) -> Result<S> {
    config.validate()?;
    let q: Vec<S> = config
        .perspectives
        .iter()
        .map(|p| {
            let dict = dicts
                .get(p)
                .ok_or_else(|| Error::usage(format!("no probability dictionary for {p}")))?;
            perspective_pass_probability(inst, dict)
        })
        .collect::<Result<_>>()?;
    Ok(pass_count_tail(&q, config.n_p) * S::from_f64(config.alpha))
}

/// `P(#passes > n_p)` for independent perspectives with pass
/// probabilities `q`.
pub fn pass_count_tail<S: Probability>(q: &[S], n_p: usize) -> S {
    let mut total = S::zero();
    for mask in 0u32..(1u32 << q.len()) {
        if (mask.count_ones() as usize) <= n_p {
            continue;
        }
        let mut prob = S::one();
        for (i, qi) in q.iter().enumerate() {
            prob = prob
                * if mask & (1 << i) != 0 {
                    qi.clone()
                } else {
                    S::one() - qi.clone()
                };
        }
        total = total + prob;
    }
    total
}

#[cfg(test)]
mod tests;
