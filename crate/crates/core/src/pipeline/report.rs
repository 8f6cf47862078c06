//! Report bundles and the CSV series behind each figure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::EvalCase;
use crate::distribution::{
    cumulative_error_curve, location_stats, tail_report, EntityDistribution, ErrorCurve, LocationStats, ReverseIndex,
    TailCut, TailReport,
};
use crate::entity::Perspective;
use crate::error::{Error, Result};
use crate::evalsplit::{AccuracyReport, TailSplitResult};
use crate::rebalance::{PassStats, RebalanceResult};
use crate::synthesis::{JobKind, SynthesisOutcome, SynthesisPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub perspective: Perspective,
    pub entities: usize,
    pub occurrences: u64,
    pub corpus_size: usize,
    pub top: Vec<(String, u64)>,
    /// `(rank, count)` for every entity, rank 1 first.
    pub rank_frequency: Vec<(f64, f64)>,
}

impl DistributionSummary {
    pub fn new(dist: &EntityDistribution, corpus_size: usize) -> Self {
        let rank_frequency: Vec<(f64, f64)> = dist
            .rank_frequency()
            .into_iter()
            .map(|(r, n)| (r as f64, n as f64))
            .collect();
        DistributionSummary {
            perspective: dist.perspective(),
            entities: dist.len(),
            occurrences: dist.total(),
            corpus_size,
            top: dist
                .rank_order()
                .iter()
                .take(10)
                .map(|e| (e.to_string(), dist.count(e)))
                .collect(),
            rank_frequency,
        }
    }
}

/// Entity locations of correctly and wrongly answered cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationComparison {
    pub perspective: Perspective,
    pub correct: Option<LocationStats>,
    pub wrong: Option<LocationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceSummary {
    pub total: usize,
    pub kept: usize,
    pub retention_rate: f64,
    pub per_perspective: BTreeMap<Perspective, PassStats>,
    pub missing_entities: usize,
}

impl From<&RebalanceResult> for RebalanceSummary {
    fn from(r: &RebalanceResult) -> Self {
        RebalanceSummary {
            total: r.total,
            kept: r.kept.len(),
            retention_rate: r.retention_rate(),
            per_perspective: r.per_perspective.clone(),
            missing_entities: r.missing_entities,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub budget: usize,
    pub core_size: usize,
    pub accepted_jobs: usize,
    pub vision_jobs: usize,
    pub language_jobs: usize,
    pub truncated: usize,
    /// Share of accepted jobs whose scarcity score is below 5.
    pub share_p_star_below_5: Option<f64>,
    pub produced: Option<usize>,
    pub failed: Option<usize>,
    pub flagged: Option<usize>,
}

impl SynthesisSummary {
    pub fn new(plan: &SynthesisPlan, outcome: Option<&SynthesisOutcome>) -> Self {
        let vision_jobs = plan.jobs.iter().filter(|j| j.kind == JobKind::VisionFull).count();
        let below = plan.jobs.iter().filter(|j| j.p_star.is_some_and(|p| p < 5.0)).count();
        SynthesisSummary {
            budget: plan.budget,
            core_size: plan.core_size,
            accepted_jobs: plan.accepted(),
            vision_jobs,
            language_jobs: plan.accepted() - vision_jobs,
            truncated: plan.truncated,
            share_p_star_below_5: (!plan.jobs.is_empty()).then(|| below as f64 / plan.jobs.len() as f64),
            produced: outcome.map(|o| o.synthetic.len()),
            failed: outcome.map(|o| o.failed.len()),
            flagged: outcome.map(|o| o.flagged.len()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub distributions: Vec<DistributionSummary>,
    pub tail_reports: Vec<TailReport>,
    pub curves: Vec<ErrorCurve>,
    pub locations: Vec<LocationComparison>,
    pub tail_split: Option<TailSplitResult>,
    pub tail_accuracy: Option<AccuracyReport>,
    pub rebalance: Option<RebalanceSummary>,
    pub synthesis: Option<SynthesisSummary>,
}

impl ReportBundle {
    /// Distribution summaries and tail reports for each index.
    pub fn from_indexes(
        indexes: &BTreeMap<Perspective, ReverseIndex>,
        taus: &BTreeMap<Perspective, u64>,
    ) -> Result<Self> {
        let mut bundle = ReportBundle::default();
        for (p, idx) in indexes {
            let dist = idx.distribution();
            bundle
                .distributions
                .push(DistributionSummary::new(&dist, idx.corpus_size));
            if idx.is_empty() {
                continue;
            }
            let tau = taus
                .get(p)
                .copied()
                .ok_or_else(|| Error::usage(format!("no tau for `{p}`")))?;
            bundle.tail_reports.push(tail_report(idx, TailCut::Frequency(tau))?);
        }
        Ok(bundle)
    }

    /// Error curves and location statistics for an evaluation log.
    pub fn add_eval(&mut self, cases: &[EvalCase], dists: &BTreeMap<Perspective, EntityDistribution>) {
        let (correct, wrong): (Vec<&EvalCase>, Vec<&EvalCase>) = cases.iter().partition(|c| c.correct);
        for (p, dist) in dists {
            self.curves.push(cumulative_error_curve(cases, dist));
            self.locations.push(LocationComparison {
                perspective: *p,
                correct: location_stats(correct.iter().copied(), dist).ok(),
                wrong: location_stats(wrong.iter().copied(), dist).ok(),
            });
        }
    }
}

fn write_series(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a two-column series written by [`emit_plot_data`].
pub fn read_series(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some("x,y") {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: "expected header `x,y`".into(),
        });
    }
    lines
        .map(|(n, line)| {
            let bad = || Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                msg: format!("bad row `{line}`"),
            };
            let (x, y) = line.split_once(',').ok_or_else(bad)?;
            Ok((x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Writes one CSV per series: `rank_frequency_<p>.csv`,
/// `cumulative_error_<p>.csv` and, when present, `tail_accuracy.csv`.
pub fn emit_plot_data(bundle: &ReportBundle, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for d in &bundle.distributions {
        let path = dir.join(format!("rank_frequency_{}.csv", d.perspective));
        write_series(&path, &d.rank_frequency)?;
        written.push(path);
    }
    for c in &bundle.curves {
        let path = dir.join(format!("cumulative_error_{}.csv", c.perspective));
        write_series(&path, &c.points)?;
        written.push(path);
    }
    if let Some(acc) = &bundle.tail_accuracy {
        let path = dir.join("tail_accuracy.csv");
        fs::write(&path, acc.to_csv()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
