//! Tail/head splits of an evaluation log and per-bucket accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::EvalCase;
use crate::distribution::{mean_rank, EntityDistribution};
use crate::entity::Perspective;
use crate::error::{Error, Result};

/// How per-perspective ranks are put on a common scale before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Plain mean rank.
    #[default]
    Raw,
    /// Mean rank divided by the perspective's sentinel rank, so every
    /// perspective lands in `(0, 1]`.
    Normalized,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "normalized" | "norm" => Ok(ScoreMode::Normalized),
            other => Err(Error::usage(format!("unknown score mode `{other}` (raw|normalized)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSplitConfig {
    pub ratios: Vec<f64>,
    pub perspectives: Vec<Perspective>,
    #[serde(default)]
    pub mode: ScoreMode,
}

impl TailSplitConfig {
    pub fn new(ratios: Vec<f64>, perspectives: Vec<Perspective>) -> Result<Self> {
        let cfg = TailSplitConfig {
            ratios,
            perspectives,
            mode: ScoreMode::Raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::usage("at least one tail ratio is required"));
        }
        if self.perspectives.is_empty() {
            return Err(Error::usage("at least one perspective is required"));
        }
        for r in &self.ratios {
            if !(*r > 0.0 && *r <= 1.0) {
                return Err(Error::usage(format!("tail ratio {r} outside (0, 1]")));
            }
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::usage("tail ratios must be strictly increasing"));
        }
        Ok(())
    }
}

/// Parses `0.05,0.1` style lists. Values above 1 are read as percentages.
pub fn parse_ratios(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let v: f64 = p
                .trim_end_matches('%')
                .parse()
                .map_err(|_| Error::usage(format!("bad ratio `{p}`")))?;
            Ok(if v > 1.0 || p.ends_with('%') { v / 100.0 } else { v })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSplit {
    pub ratio: f64,
    /// Cases scoring strictly above this are tail.
    pub tau_r: f64,
    /// Fraction of covered cases that ended up in the tail.
    pub achieved: f64,
    pub tail: Vec<String>,
    pub head: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSplitResult {
    pub mode: ScoreMode,
    pub perspectives: Vec<Perspective>,
    /// Covered cases, highest score first, ties by id.
    pub scores: Vec<CaseScore>,
    pub splits: Vec<RatioSplit>,
    /// Cases with no entities in any considered perspective.
    pub excluded: Vec<String>,
}

impl TailSplitResult {
    /// Ids of covered cases scoring above `tau_r`.
    pub fn tail_above(&self, tau_r: f64) -> BTreeSet<&str> {
        self.scores
            .iter()
            .filter(|c| c.score > tau_r)
            .map(|c| c.case_id.as_str())
            .collect()
    }
}

/// Scarcity score of one case, `None` when it has no entities at all.
pub fn case_score(
    case: &EvalCase,
    dists: &BTreeMap<Perspective, EntityDistribution>,
    perspectives: &[Perspective],
    mode: ScoreMode,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for p in perspectives {
        let (Some(ents), Some(dist)) = (case.entities.get(p), dists.get(p)) else {
            continue;
        };
        let Some(m) = mean_rank(ents, dist) else { continue };
        sum += match mode {
            ScoreMode::Raw => m,
            ScoreMode::Normalized => m / dist.sentinel_rank() as f64,
        };
        used += 1;
    }
    (used > 0).then(|| sum / used as f64)
}

/// Largest tail size `k <= limit` that a threshold can cut out of
/// `sorted` (descending) without splitting a tie.
fn cut_point(sorted: &[f64], limit: usize) -> usize {
    let n = sorted.len();
    (0..=limit.min(n))
        .rev()
        .find(|&k| k == 0 || k == n || sorted[k - 1] > sorted[k])
        .unwrap_or(0)
}

pub fn tail_split(
    cases: &[EvalCase],
    dists: &BTreeMap<Perspective, EntityDistribution>,
    config: &TailSplitConfig,
) -> Result<TailSplitResult> {
    config.validate()?;
    if let Some(p) = config.perspectives.iter().find(|p| !dists.contains_key(p)) {
        return Err(Error::usage(format!("no training distribution for perspective `{p}`")));
    }
    let mut scores = Vec::with_capacity(cases.len());
    let mut excluded = Vec::new();
    for c in cases {
        match case_score(c, dists, &config.perspectives, config.mode) {
            Some(score) => scores.push(CaseScore {
                case_id: c.case_id.clone(),
                score,
            }),
            None => excluded.push(c.case_id.clone()),
        }
    }
    if scores.is_empty() {
        return Err(Error::data(
            "no evaluation case has entities in the chosen perspectives",
        ));
    }
    if !excluded.is_empty() {
        log::warn!("{} evaluation cases have no entities and were excluded", excluded.len());
    }
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.case_id.cmp(&b.case_id)));

    let values: Vec<f64> = scores.iter().map(|c| c.score).collect();
    let n = values.len();
    let splits = config
        .ratios
        .iter()
        .map(|&ratio| {
            let limit = (ratio * n as f64 + 1e-9).floor() as usize;
            let k = cut_point(&values, limit);
            let tau_r = if k < n { values[k] } else { 0.0 };
            let mut tail: Vec<String> = scores[..k].iter().map(|c| c.case_id.clone()).collect();
            let mut head: Vec<String> = scores[k..].iter().map(|c| c.case_id.clone()).collect();
            tail.sort();
            head.sort();
            RatioSplit {
                ratio,
                tau_r,
                achieved: k as f64 / n as f64,
                tail,
                head,
            }
        })
        .collect();
    Ok(TailSplitResult {
        mode: config.mode,
        perspectives: config.perspectives.clone(),
        scores,
        splits,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub bucket: String,
    pub n: usize,
    pub correct: usize,
    /// Percentage, absent for an empty bucket.
    pub accuracy: Option<f64>,
}

impl BucketAccuracy {
    fn new(bucket: String, n: usize, correct: usize) -> Self {
        let accuracy = (n > 0).then(|| 100.0 * correct as f64 / n as f64);
        BucketAccuracy {
            bucket,
            n,
            correct,
            accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<BucketAccuracy>,
}

fn percent_label(ratio: f64) -> String {
    let v = (ratio * 100.0 * 1e6).round() / 1e6;
    format!("{v}")
}

impl AccuracyReport {
    pub fn row(&self, bucket: &str) -> Option<&BucketAccuracy> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,n,correct,accuracy\n");
        for r in &self.rows {
            let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.bucket, r.n, r.correct, acc);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Accuracy for each tail@k and head@(100-k) bucket, then overall.
pub fn tail_accuracy_report(split: &TailSplitResult, cases: &[EvalCase]) -> Result<AccuracyReport> {
    let correct: BTreeMap<&str, bool> = cases.iter().map(|c| (c.case_id.as_str(), c.correct)).collect();
    let tally = |ids: &mut dyn Iterator<Item = &str>| -> Result<(usize, usize)> {
        let (mut n, mut ok) = (0, 0);
        for id in ids {
            let c = correct
                .get(id)
                .ok_or_else(|| Error::data(format!("split references unknown case `{id}`")))?;
            n += 1;
            ok += usize::from(*c);
        }
        Ok((n, ok))
    };
    let mut rows = Vec::with_capacity(2 * split.splits.len() + 1);
    for s in &split.splits {
        let label = percent_label(s.ratio);
        let (n, ok) = tally(&mut s.tail.iter().map(String::as_str))?;
        rows.push(BucketAccuracy::new(format!("tail@{label}"), n, ok));
        let (n, ok) = tally(&mut s.head.iter().map(String::as_str))?;
        rows.push(BucketAccuracy::new(
            format!("head@{}", percent_label(1.0 - s.ratio)),
            n,
            ok,
        ));
    }
    let (n, ok) = tally(&mut split.scores.iter().map(|c| c.case_id.as_str()))?;
    rows.push(BucketAccuracy::new("overall".into(), n, ok));
    Ok(AccuracyReport { rows })
}
