//! Data synthesis: how many samples each scarce instance gets, which head
//! words a rewrite should swap for tail synonyms, and running the plan
//! against generation backends.

pub mod backend;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataInstance, Turn};
use crate::distribution::EntityDistribution;
use crate::entity::Perspective;
use crate::error::{Error, Result, Warning};
use crate::extraction::{words, SynonymLexicon, WordList};
use crate::rebalance::ProbabilityDicts;
use crate::scalar::Probability;
use crate::template::Template;

pub use backend::{HttpSynthesisBackend, MockSynthesisBackend, SynthesisBackend};

/// Default image-editing prompt: keep the main content, change the style.
pub const DEFAULT_IMAGE_PROMPT: &str =
    "Keep every object, its position and its count unchanged; render the scene in a different visual style.";

/// Default caption→conversation template. `{caption}` is substituted.
pub const DEFAULT_EXPAND_TEMPLATE: &str = "Write a short conversation about an image, using only facts stated in its caption. \
Answer with a JSON array of {\"from\": \"human\" | \"gpt\", \"value\": string} turns; the first human turn begins with \"<image>\\n\".\n\
CAPTION: {caption}\n";

/// Default rewrite template. `{substitutions}` holds `head => tail` lines,
/// `{conversation}` the source turns as JSON.
pub const DEFAULT_REWRITE_TEMPLATE: &str =
    "Rewrite the conversation so that each word on the left is replaced by the word on the right. \
Keep the meaning and the JSON structure; answer with the JSON array only.\n\
SUBSTITUTIONS:\n{substitutions}\n\
CONVERSATION: {conversation}\n";

/// Number of synthetic samples for a scarcity score: 0 below 1,
/// `floor(sqrt(p))` on `[1, 5)`, and 2 from 5 on.
///
/// On `[1, 5)` the floor of the square root is 1 below 4 and 2 above, so the
/// rule needs only comparisons and stays exact for rational scores.
pub fn n_aug_for<S: Probability>(p_star: &S) -> u8 {
    if *p_star < S::one() {
        0
    } else if *p_star < S::from_ratio(4, 1) {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisQuantity<S> {
    pub id: String,
    /// Largest raw probability over all entities; `None` without entities.
    pub p_star: Option<S>,
    pub n_aug: u8,
}

impl<S: Probability> SynthesisQuantity<S> {
    pub fn flagged(&self) -> bool {
        self.p_star.is_none()
    }
}

pub fn compute_synthesis_quantity<S: Probability>(
    inst: &DataInstance,
    dicts: &ProbabilityDicts<S>,
) -> SynthesisQuantity<S> {
    let mut p_star: Option<S> = None;
    for (p, dict) in dicts {
        let Some(set) = inst.entities.get(p) else { continue };
        for e in set {
            if let Some(raw) = dict.raw_p(e) {
                if p_star.as_ref().is_none_or(|m| raw > m) {
                    p_star = Some(raw.clone());
                }
            }
        }
    }
    SynthesisQuantity {
        id: inst.id.clone(),
        n_aug: p_star.as_ref().map_or(0, n_aug_for),
        p_star,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    VisionFull,
    LanguageRewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisJob {
    pub kind: JobKind,
    pub source_id: String,
    /// Index of this job among the source's jobs; the output id is
    /// `<source_id>#syn<ordinal>`.
    pub ordinal: u32,
    pub p_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_prompt: Option<String>,
    /// Head token → tail synonym.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub substitutions: BTreeMap<String, String>,
}

impl SynthesisJob {
    pub fn output_id(&self) -> String {
        format!("{}#syn{}", self.source_id, self.ordinal)
    }

    fn priority_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let a = self.p_star.unwrap_or(f64::NEG_INFINITY);
        let b = other.p_star.unwrap_or(f64::NEG_INFINITY);
        b.total_cmp(&a)
            .then_with(|| self.source_id.cmp(&other.source_id))
            .then_with(|| self.ordinal.cmp(&other.ordinal))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    /// Accepted jobs in priority order.
    pub jobs: Vec<SynthesisJob>,
    pub budget: usize,
    pub core_size: usize,
    /// Jobs that were planned but cut by the budget.
    pub truncated: usize,
    pub warnings: Vec<Warning>,
}

impl SynthesisPlan {
    pub fn accepted(&self) -> usize {
        self.jobs.len()
    }
}

/// Head tokens (`N_e > tau`) that have a tail synonym (`N_e ≤ tau`, unseen
/// included), each mapped to its rarest such synonym; ties go to the
/// lexicographically smaller word. Stopwords are never touched.
pub fn plan_language_rewrite(
    inst: &DataInstance,
    tokens: &EntityDistribution,
    lexicon: &SynonymLexicon,
    stopwords: &WordList,
    tau: u64,
) -> BTreeMap<String, String> {
    let mut subs = BTreeMap::new();
    let Some(set) = inst.entities.get(&Perspective::Token) else {
        return subs;
    };
    for head in set {
        let h = head.as_str();
        if stopwords.contains(h) || tokens.count(head) <= tau {
            continue;
        }
        let best = lexicon
            .synonyms(h)
            .iter()
            .filter(|s| !stopwords.contains(s))
            .filter_map(|s| {
                let n = crate::entity::EntityKey::new(s).map_or(0, |k| tokens.count(&k));
                (n <= tau).then_some((n, s))
            })
            .min();
        if let Some((_, tail)) = best {
            subs.insert(h.to_owned(), tail.clone());
        }
    }
    subs
}

/// Which synthesis paths a plan may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    /// Vision jobs for scarce instances plus rewrites of head instances.
    #[default]
    All,
    /// Rewrites only.
    TokenRewrite,
}

pub struct Planner<'a> {
    pub tokens: &'a EntityDistribution,
    pub lexicon: &'a SynonymLexicon,
    pub stopwords: &'a WordList,
    pub token_tau: u64,
    pub image_prompt: String,
    pub mode: SynthesisMode,
}

impl Planner<'_> {
    /// Plans jobs over `corpus` and keeps the highest-priority
    /// `budget − core_size` of them.
    pub fn plan<S: Probability>(
        &self,
        corpus: &[DataInstance],
        dicts: &ProbabilityDicts<S>,
        core_size: usize,
        budget: usize,
    ) -> SynthesisPlan {
        let mut jobs = Vec::new();
        let mut warnings = Vec::new();
        for inst in corpus {
            let q = compute_synthesis_quantity(inst, dicts);
            let p_star = q.p_star.as_ref().map(S::to_f64_lossy);
            if q.flagged() {
                warnings.push(Warning::new(&inst.id, "no entities; synthesis quantity is 0"));
            }
            let rewrite = || plan_language_rewrite(inst, self.tokens, self.lexicon, self.stopwords, self.token_tau);
            let language_job = |ordinal: u32, substitutions: BTreeMap<String, String>| SynthesisJob {
                kind: JobKind::LanguageRewrite,
                source_id: inst.id.clone(),
                ordinal,
                p_star,
                image_ref: None,
                image_prompt: None,
                substitutions,
            };
            let vision = self.mode == SynthesisMode::All && q.n_aug > 0;
            if vision && inst.has_image() {
                for k in 0..q.n_aug {
                    jobs.push(SynthesisJob {
                        kind: JobKind::VisionFull,
                        source_id: inst.id.clone(),
                        ordinal: u32::from(k),
                        p_star,
                        image_ref: inst.image_ref.clone(),
                        image_prompt: Some(self.image_prompt.clone()),
                        substitutions: BTreeMap::new(),
                    });
                }
                continue;
            }
            let subs = rewrite();
            if !subs.is_empty() {
                jobs.push(language_job(0, subs));
            } else if vision {
                warnings.push(Warning::new(
                    &inst.id,
                    "scarce instance without image or rewrite; skipped",
                ));
            }
        }
        jobs.sort_by(SynthesisJob::priority_cmp);
        let room = budget.saturating_sub(core_size);
        let truncated = jobs.len().saturating_sub(room);
        jobs.truncate(room);
        SynthesisPlan {
            jobs,
            budget,
            core_size,
            truncated,
            warnings,
        }
    }
}

/// Templates used while executing a plan.
#[derive(Debug, Clone)]
pub struct SynthesisTemplates {
    pub expand: Template,
    pub rewrite: Template,
}

impl Default for SynthesisTemplates {
    fn default() -> Self {
        SynthesisTemplates {
            expand: Template::new(DEFAULT_EXPAND_TEMPLATE),
            rewrite: Template::new(DEFAULT_REWRITE_TEMPLATE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobReport {
    pub job: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthesisOutcome {
    /// Successful outputs in plan order.
    pub synthetic: Vec<DataInstance>,
    pub failed: Vec<JobReport>,
    /// Rewrites that still missed a planned synonym after one retry.
    pub flagged: Vec<JobReport>,
}

enum JobResult {
    Done(DataInstance),
    Failed(String),
    Flagged(String),
}

fn parse_turns(text: &str) -> Result<Vec<Turn>> {
    let trimmed = text.trim();
    let start = trimmed.find('[').unwrap_or(0);
    let end = trimmed.rfind(']').map_or(trimmed.len(), |e| e + 1);
    serde_json::from_str(&trimmed[start..end]).map_err(|e| Error::data(format!("unparseable conversation: {e}")))
}

/// True when every word of `phrase` appears consecutively in `text`
/// (allowing an `s`/`es` plural on the last word).
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay: Vec<String> = words(text).collect();
    let needle: Vec<String> = words(phrase).collect();
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    let last = needle.len() - 1;
    hay.windows(needle.len()).any(|w| {
        w.iter().zip(&needle).enumerate().all(|(i, (h, n))| {
            h == n || (i == last && (h.strip_suffix('s') == Some(n) || h.strip_suffix("es") == Some(n)))
        })
    })
}

pub struct Executor<'a> {
    pub backend: &'a dyn SynthesisBackend,
    pub templates: &'a SynthesisTemplates,
}

impl Executor<'_> {
    fn run_vision(&self, job: &SynthesisJob) -> Result<DataInstance> {
        let source = job
            .image_ref
            .as_deref()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::data("vision job without image"))?;
        let prompt = job.image_prompt.as_deref().unwrap_or(DEFAULT_IMAGE_PROMPT);
        let image = self.backend.image_gen(source, prompt)?;
        let caption = self.backend.caption(&image)?;
        let text = self
            .backend
            .chat(&self.templates.expand.render(&[("caption", caption.trim())]))?;
        let inst = DataInstance::new(job.output_id(), Some(image), parse_turns(&text)?);
        inst.validate()?;
        Ok(inst)
    }

    fn run_rewrite(&self, job: &SynthesisJob, source: &DataInstance) -> Result<JobResult> {
        let subs: String = job.substitutions.iter().map(|(h, t)| format!("{h} => {t}\n")).collect();
        let conversation = serde_json::to_string(&source.conversation).expect("turns serialize");
        let prompt = self
            .templates
            .rewrite
            .render(&[("substitutions", subs.trim_end()), ("conversation", &conversation)]);
        let mut missing = Vec::new();
        for _attempt in 0..2 {
            let turns = parse_turns(&self.backend.chat(&prompt)?)?;
            let mut inst = DataInstance::new(job.output_id(), source.image_ref.clone(), turns);
            inst.validate()?;
            let text = inst.full_text();
            missing = job
                .substitutions
                .values()
                .filter(|t| !contains_phrase(&text, t))
                .cloned()
                .collect();
            if missing.is_empty() {
                inst.entities.clear();
                return Ok(JobResult::Done(inst));
            }
        }
        Ok(JobResult::Flagged(format!("missing synonyms: {}", missing.join(", "))))
    }

    fn run(&self, job: &SynthesisJob, sources: &HashMap<&str, &DataInstance>) -> JobResult {
        if sources.contains_key(job.output_id().as_str()) {
            return JobResult::Failed(format!("output id `{}` collides with a source id", job.output_id()));
        }
        let res = match job.kind {
            JobKind::VisionFull => self.run_vision(job).map(JobResult::Done),
            JobKind::LanguageRewrite => match sources.get(job.source_id.as_str()) {
                Some(src) => self.run_rewrite(job, src),
                None => Err(Error::data(format!("source `{}` not found", job.source_id))),
            },
        };
        res.unwrap_or_else(|e| JobResult::Failed(e.to_string()))
    }

    /// Runs every job on `pool`; failures are recorded and skipped.
    pub fn execute(&self, plan: &SynthesisPlan, corpus: &[DataInstance], pool: &rayon::ThreadPool) -> SynthesisOutcome {
        let sources: HashMap<&str, &DataInstance> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
        let results: Vec<JobResult> = pool.install(|| plan.jobs.par_iter().map(|j| self.run(j, &sources)).collect());
        let mut out = SynthesisOutcome::default();
        for (job, r) in plan.jobs.iter().zip(results) {
            match r {
                JobResult::Done(inst) => out.synthetic.push(inst),
                JobResult::Failed(reason) => out.failed.push(JobReport {
                    job: job.output_id(),
                    reason,
                }),
                JobResult::Flagged(reason) => out.flagged.push(JobReport {
                    job: job.output_id(),
                    reason,
                }),
            }
        }
        out
    }
}

/// Core set followed by the synthetic instances, capped at `budget`.
pub fn merge_corpus(core: Vec<DataInstance>, synthetic: Vec<DataInstance>, budget: usize) -> Vec<DataInstance> {
    let room = budget.saturating_sub(core.len());
    let mut merged = core;
    merged.extend(synthetic.into_iter().take(room));
    merged
}
