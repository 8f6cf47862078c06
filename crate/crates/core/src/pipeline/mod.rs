//! Command implementations: each stage reads and writes files so the
//! stages can run separately or chained by [`cmd_pipeline`].

pub mod config;
pub mod manifest;
pub mod report;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_corpus, load_eval_log, write_corpus, CorpusFormat, CorpusReader, DataInstance, EvalCase};
use crate::distribution::{
    export_cooccurrence_graph, read_distribution, read_index, write_index, EntityDistribution, ReverseIndex,
};
use crate::entity::Perspective;
use crate::error::{Error, Result, Warning};
use crate::evalsplit::{tail_accuracy_report, tail_split, AccuracyReport, TailSplitConfig, TailSplitResult};
use crate::extraction::{
    annotate_corpus, AnalysisBackend, Extractor, HttpAnalysisBackend, MockAnalysisBackend, SynonymLexicon, WordList,
};
use crate::rebalance::{
    build_probability_dicts, rebalance, ProbabilityDicts, RebalanceConfig, RebalanceResult, Rebalancer,
};
use crate::synthesis::{
    merge_corpus, Executor, HttpSynthesisBackend, MockSynthesisBackend, Planner, SynthesisBackend, SynthesisOutcome,
    SynthesisPlan, SynthesisTemplates,
};
use crate::template::Template;

pub use config::{BackendKind, Settings};
pub use manifest::{digest_file, FileDigest, ManifestBuilder, RunManifest};
pub use report::{emit_plot_data, read_series, ReportBundle, SynthesisSummary};

pub(crate) fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sibling path used for a command's manifest, e.g. `core.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}

/// Contents of `meta.json` in a distribution directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistMeta {
    pub corpus_size: usize,
    pub perspectives: Vec<Perspective>,
    pub taus: BTreeMap<Perspective, u64>,
}

pub fn open_corpus(settings: &Settings, path: &Path) -> Result<CorpusReader> {
    load_corpus(path, settings.format.unwrap_or_else(|| CorpusFormat::from_path(path)))
}

pub fn read_all(settings: &Settings, path: &Path) -> Result<Vec<DataInstance>> {
    open_corpus(settings, path)?.collect()
}

fn lexicon(settings: &Settings) -> Result<WordList> {
    match &settings.lexicon {
        Some(p) => WordList::load(p),
        None => Ok(WordList::default_nouns()),
    }
}

fn stopwords(settings: &Settings) -> Result<WordList> {
    match &settings.stopwords {
        Some(p) => WordList::load(p),
        None => Ok(WordList::default_stopwords()),
    }
}

pub fn analysis_backend(settings: &Settings) -> Result<Option<Arc<dyn AnalysisBackend>>> {
    if !settings.extractor_config().needs_backend() {
        return Ok(None);
    }
    Ok(Some(match settings.backend {
        BackendKind::Mock => {
            let nouns = lexicon(settings)?;
            let accept: Vec<String> = nouns.iter().map(str::to_owned).collect();
            Arc::new(MockAnalysisBackend::new(nouns.clone(), nouns).accepting(accept))
        }
        BackendKind::Http => {
            let url = settings
                .analysis_endpoint
                .as_deref()
                .ok_or_else(|| Error::usage("http backend selected but analysis_endpoint is not set"))?;
            Arc::new(HttpAnalysisBackend::new(url, settings.timeout()))
        }
    }))
}

pub fn synthesis_backend(settings: &Settings, corpus: &[DataInstance]) -> Result<Box<dyn SynthesisBackend>> {
    Ok(match settings.backend {
        BackendKind::Mock => {
            let objects = corpus
                .iter()
                .filter_map(|i| {
                    let img = i.image_ref.clone()?;
                    let objs = i.entities.get(&Perspective::Object)?;
                    Some((img, objs.iter().map(|e| e.to_string()).collect()))
                })
                .collect();
            Box::new(MockSynthesisBackend::new(objects))
        }
        BackendKind::Http => {
            let url = settings
                .synthesis_endpoint
                .as_deref()
                .ok_or_else(|| Error::usage("http backend selected but synthesis_endpoint is not set"))?;
            Box::new(HttpSynthesisBackend::new(url, settings.timeout()))
        }
    })
}

pub fn build_extractor(settings: &Settings) -> Result<Extractor> {
    Extractor::from_config(&settings.extractor_config(), analysis_backend(settings)?)
}

/// Streams the corpus through extraction into `annotated` (JSONL) while
/// building one reverse index per active perspective.
pub fn annotate_and_index(
    settings: &Settings,
    corpus: &Path,
    annotated: &Path,
    pool: &rayon::ThreadPool,
) -> Result<(BTreeMap<Perspective, ReverseIndex>, Vec<Warning>)> {
    let extractor = build_extractor(settings)?;
    let reader = open_corpus(settings, corpus)?;
    if let Some(dir) = annotated.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let io = |e| Error::io(annotated, e);
    let mut out = BufWriter::new(File::create(annotated).map_err(io)?);
    let mut indexes: BTreeMap<Perspective, ReverseIndex> = settings
        .perspectives
        .iter()
        .map(|p| (*p, ReverseIndex::new(*p)))
        .collect();
    let mut stream = annotate_corpus(reader, &extractor, pool);
    for inst in stream.by_ref() {
        let inst = inst?;
        for idx in indexes.values_mut() {
            idx.add(&inst)?;
        }
        serde_json::to_writer(&mut out, &inst).map_err(|e| Error::data(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok((indexes, stream.into_warnings()))
}

/// Writes `<p>.jsonl` per index, `meta.json`, and the co-occurrence graph.
pub fn write_dist_dir(
    indexes: &BTreeMap<Perspective, ReverseIndex>,
    taus: &BTreeMap<Perspective, u64>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let corpus_size = indexes.values().map(|i| i.corpus_size).max().unwrap_or(0);
    for (p, idx) in indexes {
        let path = dir.join(format!("{p}.jsonl"));
        write_index(idx, &path, true)?;
        written.push(path);
        if *p == Perspective::CoOccurrence {
            let (tsv, json) = (dir.join("co_graph.tsv"), dir.join("co_graph.json"));
            export_cooccurrence_graph(idx)?.write(&tsv, &json)?;
            written.extend([tsv, json]);
        }
    }
    let meta = DistMeta {
        corpus_size,
        perspectives: indexes.keys().copied().collect(),
        taus: indexes.keys().filter_map(|p| Some((*p, *taus.get(p)?))).collect(),
    };
    let path = dir.join("meta.json");
    write_json(&path, &meta)?;
    written.push(path);
    Ok(written)
}

fn check_available(meta: &DistMeta, perspectives: &[Perspective], dir: &Path) -> Result<()> {
    match perspectives.iter().find(|p| !meta.perspectives.contains(p)) {
        Some(p) => Err(Error::usage(format!("{} has no `{p}` distribution", dir.display()))),
        None => Ok(()),
    }
}

pub fn read_dist_indexes(
    dir: &Path,
    perspectives: &[Perspective],
) -> Result<(DistMeta, BTreeMap<Perspective, ReverseIndex>)> {
    let meta: DistMeta = read_json(dir.join("meta.json"))?;
    check_available(&meta, perspectives, dir)?;
    let indexes = perspectives
        .iter()
        .map(|p| Ok((*p, read_index(&dir.join(format!("{p}.jsonl")), *p, meta.corpus_size)?)))
        .collect::<Result<_>>()?;
    Ok((meta, indexes))
}

pub fn read_dist_counts(dir: &Path, perspectives: &[Perspective]) -> Result<BTreeMap<Perspective, EntityDistribution>> {
    let meta: DistMeta = read_json(dir.join("meta.json"))?;
    check_available(&meta, perspectives, dir)?;
    perspectives
        .iter()
        .map(|p| Ok((*p, read_distribution(&dir.join(format!("{p}.jsonl")), *p)?)))
        .collect()
}

/// Loads an evaluation log, extracting entities for cases that carry none.
pub fn load_eval(settings: &Settings, path: &Path, extractor: &Extractor) -> Result<(Vec<EvalCase>, Vec<Warning>)> {
    let mut cases = load_eval_log(path, settings.matcher)?;
    let mut warnings = Vec::new();
    for c in cases.iter_mut().filter(|c| c.entities.is_empty()) {
        let (annotated, w) = extractor.annotate(&c.as_instance())?;
        c.entities = annotated.entities;
        warnings.extend(w);
    }
    Ok((cases, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutput {
    pub annotated: PathBuf,
    pub dist_dir: PathBuf,
    pub report_dir: PathBuf,
    pub bundle: ReportBundle,
    pub indexes: BTreeMap<Perspective, ReverseIndex>,
    pub warnings: Vec<Warning>,
}

fn analyze_into(
    settings: &Settings,
    corpus: &Path,
    out_dir: &Path,
    eval: Option<&Path>,
    pool: &rayon::ThreadPool,
    m: &mut ManifestBuilder,
) -> Result<AnalyzeOutput> {
    settings.validate()?;
    m.input(corpus)?;
    let annotated = out_dir.join("annotated.jsonl");
    let (indexes, mut warnings) = annotate_and_index(settings, corpus, &annotated, pool)?;
    if indexes.values().all(|i| i.corpus_size == 0) {
        return Err(Error::data(format!("{} contains no instances", corpus.display())));
    }
    m.stage("annotate", [&annotated])?;

    let dist_dir = out_dir.join("dist");
    let written = write_dist_dir(&indexes, &settings.taus, &dist_dir)?;
    m.stage("distributions", &written)?;

    let mut bundle = ReportBundle::from_indexes(&indexes, &settings.taus)?;
    if let Some(eval) = eval {
        m.input(eval)?;
        let (cases, w) = load_eval(settings, eval, &build_extractor(settings)?)?;
        warnings.extend(w);
        let dists = indexes.iter().map(|(p, i)| (*p, i.distribution())).collect();
        add_eval_to_bundle(settings, &mut bundle, &cases, &dists)?;
    }
    let report_dir = out_dir.join("report");
    let mut files = emit_plot_data(&bundle, &report_dir)?;
    let path = report_dir.join("report.json");
    write_json(&path, &bundle)?;
    files.push(path);
    m.stage("report", &files)?;
    m.warnings(warnings.iter().cloned());
    Ok(AnalyzeOutput {
        annotated,
        dist_dir,
        report_dir,
        bundle,
        indexes,
        warnings,
    })
}

fn add_eval_to_bundle(
    settings: &Settings,
    bundle: &mut ReportBundle,
    cases: &[EvalCase],
    dists: &BTreeMap<Perspective, EntityDistribution>,
) -> Result<()> {
    bundle.add_eval(cases, dists);
    let cfg = TailSplitConfig {
        ratios: settings.ratios.clone(),
        perspectives: settings.perspectives.clone(),
        mode: settings.score_mode,
    };
    let split = tail_split(cases, dists, &cfg)?;
    bundle.tail_accuracy = Some(tail_accuracy_report(&split, cases)?);
    bundle.tail_split = Some(split);
    Ok(())
}

/// Annotates the corpus, builds distributions and indexes for every active
/// perspective, and writes the report bundle and plot data.
pub fn cmd_analyze(settings: &Settings, corpus: &Path, out_dir: &Path, eval: Option<&Path>) -> Result<AnalyzeOutput> {
    let pool = settings.thread_pool()?;
    let mut m = ManifestBuilder::new("analyze", settings.to_pairs(), settings.seed);
    let out = analyze_into(settings, corpus, out_dir, eval, &pool, &mut m).map_err(|e| e.in_stage("analyze"))?;
    m.finish("ok", out_dir.join("manifest.json"))?;
    Ok(out)
}

fn empty_core_error(n_p: usize, active: usize) -> Error {
    Error::data(format!(
        "the rebalanced core set is empty: no instance passed more than n_p = {n_p} of {active} perspectives; \
         lower n_p, raise the taus, or enable more perspectives"
    ))
}

fn rebalance_corpus(
    settings: &Settings,
    corpus: &[DataInstance],
    indexes: &BTreeMap<Perspective, ReverseIndex>,
    pool: &rayon::ThreadPool,
) -> Result<(RebalanceResult, ProbabilityDicts<f64>)> {
    let n_p = settings.require_n_p()?;
    let config = RebalanceConfig {
        n_p,
        alpha: settings.alpha,
        seed: settings.seed,
        perspectives: settings.perspectives.clone(),
    };
    config.validate()?;
    let dicts: ProbabilityDicts<f64> = build_probability_dicts(indexes, &settings.taus)?;
    let result = rebalance(corpus, &Rebalancer::new(&dicts, config)?, pool)?;
    if result.kept.is_empty() {
        return Err(empty_core_error(n_p, settings.perspectives.len()));
    }
    Ok((result, dicts))
}

fn core_subset(corpus: Vec<DataInstance>, kept: &[String]) -> Vec<DataInstance> {
    let keep: std::collections::HashSet<&str> = kept.iter().map(String::as_str).collect();
    corpus.into_iter().filter(|i| keep.contains(i.id.as_str())).collect()
}

/// Resamples an annotated corpus against the indexes in `index_dir` and
/// writes the core set.
pub fn cmd_rebalance(
    settings: &Settings,
    data: &Path,
    index_dir: &Path,
    out: &Path,
    stats: Option<&Path>,
) -> Result<RebalanceResult> {
    let pool = settings.thread_pool()?;
    let mut m = ManifestBuilder::new("rebalance", settings.to_pairs(), settings.seed);
    let run = |m: &mut ManifestBuilder| -> Result<RebalanceResult> {
        settings.validate()?;
        m.input(data)?;
        let (_, indexes) = read_dist_indexes(index_dir, &settings.perspectives)?;
        let corpus = read_all(settings, data)?;
        let (result, _) = rebalance_corpus(settings, &corpus, &indexes, &pool)?;
        let core = core_subset(corpus, &result.kept);
        write_corpus(&core, out, CorpusFormat::LlavaJsonl)?;
        let mut outputs = vec![out.to_owned()];
        if let Some(stats) = stats {
            write_json(stats, &report::RebalanceSummary::from(&result))?;
            outputs.push(stats.to_owned());
        }
        m.stage("rebalance", &outputs)?;
        Ok(result)
    };
    let result = run(&mut m).map_err(|e| e.in_stage("rebalance"))?;
    m.finish("ok", manifest_path_for(out))?;
    Ok(result)
}

fn load_templates(settings: &Settings) -> Result<SynthesisTemplates> {
    let mut t = SynthesisTemplates::default();
    if let Some(p) = &settings.expand_template {
        t.expand = Template::load(p)?;
    }
    if let Some(p) = &settings.rewrite_template {
        t.rewrite = Template::load(p)?;
    }
    Ok(t)
}

fn plan_for(
    settings: &Settings,
    core: &[DataInstance],
    dicts: &ProbabilityDicts<f64>,
    indexes: &BTreeMap<Perspective, ReverseIndex>,
    budget: usize,
) -> Result<SynthesisPlan> {
    let tokens = indexes
        .get(&Perspective::Token)
        .map(ReverseIndex::distribution)
        .unwrap_or_else(|| EntityDistribution::from_counts(Perspective::Token, BTreeMap::new()));
    let lexicon = match &settings.synonyms {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::default(),
    };
    let stop = stopwords(settings)?;
    let planner = Planner {
        tokens: &tokens,
        lexicon: &lexicon,
        stopwords: &stop,
        token_tau: settings.tau(Perspective::Token),
        image_prompt: settings.image_prompt.clone(),
        mode: settings.synthesis_mode,
    };
    Ok(planner.plan(core, dicts, core.len(), budget))
}

/// Plans synthesis jobs for a core set; the budget defaults to the size of
/// the corpus the indexes were built from.
pub fn cmd_plan(settings: &Settings, core: &Path, index_dir: &Path, out: &Path) -> Result<SynthesisPlan> {
    let mut m = ManifestBuilder::new("plan-synth", settings.to_pairs(), settings.seed);
    let run = |m: &mut ManifestBuilder| -> Result<SynthesisPlan> {
        settings.validate()?;
        m.input(core)?;
        let (meta, indexes) = read_dist_indexes(index_dir, &settings.perspectives)?;
        let dicts = build_probability_dicts(&indexes, &settings.taus)?;
        let core = read_all(settings, core)?;
        let plan = plan_for(
            settings,
            &core,
            &dicts,
            &indexes,
            settings.budget.unwrap_or(meta.corpus_size),
        )?;
        write_json(out, &plan)?;
        m.warnings(plan.warnings.iter().cloned());
        m.stage("plan", [out])?;
        Ok(plan)
    };
    let plan = run(&mut m).map_err(|e| e.in_stage("plan-synth"))?;
    m.finish("ok", manifest_path_for(out))?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub outcome: SynthesisOutcome,
    pub merged_len: usize,
}

fn execute_and_merge(
    settings: &Settings,
    plan: &SynthesisPlan,
    core: Vec<DataInstance>,
    pool: &rayon::ThreadPool,
) -> Result<(SynthesisOutcome, Vec<DataInstance>)> {
    let backend = synthesis_backend(settings, &core)?;
    let templates = load_templates(settings)?;
    let exec = Executor {
        backend: backend.as_ref(),
        templates: &templates,
    };
    let outcome = exec.execute(plan, &core, pool);
    if !plan.jobs.is_empty() && outcome.synthetic.is_empty() && !outcome.failed.is_empty() {
        let endpoint = match settings.backend {
            BackendKind::Mock => "mock".to_owned(),
            BackendKind::Http => settings.synthesis_endpoint.clone().unwrap_or_default(),
        };
        return Err(Error::Transport {
            endpoint,
            msg: format!(
                "all {} jobs failed; first: {}",
                outcome.failed.len(),
                outcome.failed[0].reason
            ),
        });
    }
    for f in &outcome.failed {
        log::warn!("job {} failed: {}", f.job, f.reason);
    }
    for f in &outcome.flagged {
        log::warn!("job {} flagged: {}", f.job, f.reason);
    }
    let merged = merge_corpus(core, outcome.synthetic.clone(), plan.budget);
    Ok((outcome, merged))
}

fn job_warnings(outcome: &SynthesisOutcome) -> impl Iterator<Item = Warning> + '_ {
    outcome
        .failed
        .iter()
        .map(|r| Warning::new(&r.job, format!("failed: {}", r.reason)))
        .chain(
            outcome
                .flagged
                .iter()
                .map(|r| Warning::new(&r.job, format!("flagged: {}", r.reason))),
        )
}

/// Runs a plan against the configured backends and writes the merged corpus
/// (core set followed by the synthetic instances).
pub fn cmd_synth(
    settings: &Settings,
    plan_path: &Path,
    core: &Path,
    out: &Path,
    synthetic_out: Option<&Path>,
) -> Result<SynthOutput> {
    let pool = settings.thread_pool()?;
    let mut m = ManifestBuilder::new("synth", settings.to_pairs(), settings.seed);
    let run = |m: &mut ManifestBuilder| -> Result<SynthOutput> {
        m.input(plan_path)?;
        m.input(core)?;
        let mut plan: SynthesisPlan = read_json(plan_path)?;
        if let Some(b) = settings.budget {
            plan.budget = b;
        }
        let core = read_all(settings, core)?;
        let (outcome, merged) = execute_and_merge(settings, &plan, core, &pool)?;
        let mut outputs = vec![out.to_owned()];
        write_corpus(&merged, out, CorpusFormat::LlavaJsonl)?;
        if let Some(p) = synthetic_out {
            write_corpus(&outcome.synthetic, p, CorpusFormat::LlavaJsonl)?;
            outputs.push(p.to_owned());
        }
        m.warnings(job_warnings(&outcome));
        m.stage("synthesize", &outputs)?;
        Ok(SynthOutput {
            outcome,
            merged_len: merged.len(),
        })
    };
    let out_v = run(&mut m).map_err(|e| e.in_stage("synth"))?;
    m.finish("ok", manifest_path_for(out))?;
    Ok(out_v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSplitOutput {
    pub split: TailSplitResult,
    pub accuracy: AccuracyReport,
}

/// Splits an evaluation log into tail and head buckets against the
/// training distributions in `dist_dir`. Writes `out` (JSON) and a CSV
/// with the same stem.
pub fn cmd_tail_split(settings: &Settings, eval: &Path, dist_dir: &Path, out: &Path) -> Result<TailSplitOutput> {
    let mut m = ManifestBuilder::new("tail-split", settings.to_pairs(), settings.seed);
    let run = |m: &mut ManifestBuilder| -> Result<TailSplitOutput> {
        m.input(eval)?;
        let dists = read_dist_counts(dist_dir, &settings.perspectives)?;
        let (cases, warnings) = load_eval(settings, eval, &build_extractor(settings)?)?;
        let cfg = TailSplitConfig {
            ratios: settings.ratios.clone(),
            perspectives: settings.perspectives.clone(),
            mode: settings.score_mode,
        };
        let split = tail_split(&cases, &dists, &cfg)?;
        let accuracy = tail_accuracy_report(&split, &cases)?;
        let output = TailSplitOutput { split, accuracy };
        write_json(out, &output)?;
        let csv = out.with_extension("csv");
        fs::write(&csv, output.accuracy.to_csv()).map_err(|e| Error::io(&csv, e))?;
        m.warnings(warnings);
        m.warnings(
            output
                .split
                .excluded
                .iter()
                .map(|id| Warning::new(id, "no entities; excluded from split")),
        );
        m.stage("tail-split", [out, &csv])?;
        Ok(output)
    };
    let output = run(&mut m).map_err(|e| e.in_stage("tail-split"))?;
    m.finish("ok", manifest_path_for(out))?;
    Ok(output)
}

/// Rebuilds the report bundle from a distribution directory and an
/// optional evaluation log.
pub fn cmd_report(settings: &Settings, dist_dir: &Path, eval: Option<&Path>, out_dir: &Path) -> Result<ReportBundle> {
    let mut m = ManifestBuilder::new("report", settings.to_pairs(), settings.seed);
    let run = |m: &mut ManifestBuilder| -> Result<ReportBundle> {
        let (_, indexes) = read_dist_indexes(dist_dir, &settings.perspectives)?;
        let mut bundle = ReportBundle::from_indexes(&indexes, &settings.taus)?;
        if let Some(eval) = eval {
            m.input(eval)?;
            let (cases, warnings) = load_eval(settings, eval, &build_extractor(settings)?)?;
            m.warnings(warnings);
            let dists = indexes.iter().map(|(p, i)| (*p, i.distribution())).collect();
            add_eval_to_bundle(settings, &mut bundle, &cases, &dists)?;
        }
        let mut files = emit_plot_data(&bundle, out_dir)?;
        let path = out_dir.join("report.json");
        write_json(&path, &bundle)?;
        files.push(path);
        m.stage("report", &files)?;
        Ok(bundle)
    };
    let bundle = run(&mut m).map_err(|e| e.in_stage("report"))?;
    m.finish("ok", out_dir.join("manifest.json"))?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub merged: PathBuf,
    pub merged_len: usize,
    pub original_len: usize,
    pub core_len: usize,
    pub bundle: ReportBundle,
    pub manifest: RunManifest,
}

/// Analyze, rebalance, plan, synthesize and merge in one run. Outputs land
/// in `out_dir`; on failure the files already written stay in place and
/// the manifest records the failed stage.
pub fn cmd_pipeline(settings: &Settings, corpus: &Path, out_dir: &Path, eval: Option<&Path>) -> Result<PipelineOutput> {
    let pool = settings.thread_pool()?;
    let mut m = ManifestBuilder::new("pipeline", settings.to_pairs(), settings.seed);
    let manifest_path = out_dir.join("manifest.json");
    match pipeline_stages(settings, corpus, out_dir, eval, &pool, &mut m) {
        Ok((merged, merged_len, original_len, core_len, bundle)) => {
            let manifest = m.finish("ok", &manifest_path)?;
            Ok(PipelineOutput {
                merged,
                merged_len,
                original_len,
                core_len,
                bundle,
                manifest,
            })
        }
        Err(e) => {
            let written: Vec<String> = m
                .manifest()
                .stages
                .iter()
                .flat_map(|s| s.outputs.iter().map(|d| d.path.clone()))
                .collect();
            log::error!("pipeline stopped; outputs kept: {}", written.join(", "));
            m.finish(&format!("failed: {e}"), &manifest_path)?;
            Err(e)
        }
    }
}

type StagesOut = (PathBuf, usize, usize, usize, ReportBundle);

fn pipeline_stages(
    settings: &Settings,
    corpus: &Path,
    out_dir: &Path,
    eval: Option<&Path>,
    pool: &rayon::ThreadPool,
    m: &mut ManifestBuilder,
) -> Result<StagesOut> {
    settings.require_n_p()?;
    let analysis = analyze_into(settings, corpus, out_dir, eval, pool, m).map_err(|e| e.in_stage("analyze"))?;
    let mut bundle = analysis.bundle;

    let annotated = read_all(settings, &analysis.annotated).map_err(|e| e.in_stage("rebalance"))?;
    let original_len = annotated.len();
    let (result, dicts) =
        rebalance_corpus(settings, &annotated, &analysis.indexes, pool).map_err(|e| e.in_stage("rebalance"))?;
    let core = core_subset(annotated, &result.kept);
    let core_path = out_dir.join("core.jsonl");
    write_corpus(&core, &core_path, CorpusFormat::LlavaJsonl).map_err(|e| e.in_stage("rebalance"))?;
    let stats_path = out_dir.join("rebalance_stats.json");
    bundle.rebalance = Some(report::RebalanceSummary::from(&result));
    write_json(&stats_path, &bundle.rebalance).map_err(|e| e.in_stage("rebalance"))?;
    m.stage("rebalance", [&core_path, &stats_path])?;

    let budget = settings.budget.unwrap_or(original_len);
    let plan = plan_for(settings, &core, &dicts, &analysis.indexes, budget).map_err(|e| e.in_stage("plan-synth"))?;
    let plan_path = out_dir.join("plan.json");
    write_json(&plan_path, &plan).map_err(|e| e.in_stage("plan-synth"))?;
    m.warnings(plan.warnings.iter().cloned());
    m.stage("plan-synth", [&plan_path])?;

    let core_len = core.len();
    let (outcome, merged) = execute_and_merge(settings, &plan, core, pool).map_err(|e| e.in_stage("synth"))?;
    let synthetic_path = out_dir.join("synthetic.jsonl");
    write_corpus(&outcome.synthetic, &synthetic_path, CorpusFormat::LlavaJsonl).map_err(|e| e.in_stage("synth"))?;
    m.warnings(job_warnings(&outcome));
    m.stage("synth", [&synthetic_path])?;

    let merged_path = out_dir.join("merged.jsonl");
    write_corpus(&merged, &merged_path, CorpusFormat::LlavaJsonl).map_err(|e| e.in_stage("merge"))?;
    bundle.synthesis = Some(SynthesisSummary::new(&plan, Some(&outcome)));
    let report_path = out_dir.join("report").join("report.json");
    write_json(&report_path, &bundle).map_err(|e| e.in_stage("merge"))?;
    m.stage("merge", [&merged_path, &report_path])?;
    Ok((merged_path, merged.len(), original_len, core_len, bundle))
}

#[cfg(test)]
mod tests;
