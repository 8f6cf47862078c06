//! Entity extraction for the four perspectives.
//!
//! Builtin modes run fully offline from word lists and a rule table; remote
//! modes delegate to an [`AnalysisBackend`].

pub mod lexicon;
pub mod remote;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::DataInstance;
use crate::entity::{canonicalize, EntityKey, EntitySet, Perspective};
use crate::error::{Error, Result, Warning};
use crate::template::Template;

pub use lexicon::{RuleTable, SynonymLexicon, WordList};
pub use remote::{AnalysisBackend, HttpAnalysisBackend, MockAnalysisBackend};

const IMAGE_PLACEHOLDER: &str = "<image>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenMode {
    #[default]
    BuiltinLexicon,
    RemotePos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectMode {
    #[default]
    FromAnnotations,
    RemoteLlmPlusGrounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterrogationMode {
    #[default]
    BuiltinRules,
    RemoteLlm,
}

/// File-level extractor settings. `None` paths select the embedded
/// defaults.
#[derive(Debug, Clone, Default)]
pub struct ExtractorConfig {
    pub token_mode: TokenMode,
    pub object_mode: ObjectMode,
    pub interrogation_mode: InterrogationMode,
    pub lexicon_path: Option<PathBuf>,
    pub stopword_path: Option<PathBuf>,
    pub rules_path: Option<PathBuf>,
    pub object_prompt_path: Option<PathBuf>,
    pub interrogation_prompt_path: Option<PathBuf>,
}

impl ExtractorConfig {
    pub fn needs_backend(&self) -> bool {
        self.token_mode == TokenMode::RemotePos
            || self.object_mode == ObjectMode::RemoteLlmPlusGrounding
            || self.interrogation_mode == InterrogationMode::RemoteLlm
    }
}

/// Splits on non-alphanumerics and lowercases, ignoring the image
/// placeholder.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(IMAGE_PLACEHOLDER)
        .flat_map(|part| part.split(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Maps a word to its lexicon form: the word itself, or the first of
/// `-ies→y`, `-es→`, `-s→` whose result is in the lexicon.
pub fn lexicon_form(word: &str, lexicon: &WordList) -> Option<String> {
    if lexicon.contains(word) {
        return Some(word.to_owned());
    }
    let candidates = [
        word.strip_suffix("ies").map(|s| format!("{s}y")),
        word.strip_suffix("es").map(str::to_owned),
        word.strip_suffix('s').map(str::to_owned),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|c| !c.is_empty() && lexicon.contains(c))
}

/// Leading interrogative construction of every question sentence in
/// `text`. A sentence is a question when it ends with `?`; if its start
/// does not match, each comma/semicolon clause is tried in turn.
pub fn interrogative_forms(text: &str, rules: &RuleTable) -> EntitySet {
    let mut out = EntitySet::new();
    let text = text.replace(IMAGE_PLACEHOLDER, " ");
    let mut sentence = String::new();
    for c in text.chars() {
        if matches!(c, '.' | '!' | '\n' | '?') {
            if c == '?' {
                if let Some(form) = question_form(&sentence, rules) {
                    out.extend(EntityKey::new(&form));
                }
            }
            sentence.clear();
        } else {
            sentence.push(c);
        }
    }
    out
}

fn question_form(sentence: &str, rules: &RuleTable) -> Option<String> {
    std::iter::once(sentence)
        .chain(sentence.split([',', ';']).skip(1))
        .find_map(|clause| {
            let w: Vec<String> = words(clause).collect();
            let refs: Vec<&str> = w.iter().map(String::as_str).collect();
            rules.leading_form(&refs)
        })
}

/// All unordered pairs of distinct objects.
pub fn build_cooccurrence_entities(objects: &EntitySet) -> EntitySet {
    let v: Vec<&EntityKey> = objects.iter().collect();
    let mut out = EntitySet::new();
    for (i, a) in v.iter().enumerate() {
        for b in &v[i + 1..] {
            out.extend(EntityKey::pair(a.as_str(), b.as_str()));
        }
    }
    out
}

/// Resolved extractor: word lists loaded, templates read, backend attached.
#[derive(Clone)]
pub struct Extractor {
    pub token_mode: TokenMode,
    pub object_mode: ObjectMode,
    pub interrogation_mode: InterrogationMode,
    pub lexicon: WordList,
    pub stopwords: WordList,
    pub rules: RuleTable,
    pub object_prompt: Template,
    pub interrogation_prompt: Template,
    backend: Option<Arc<dyn AnalysisBackend>>,
}

impl std::fmt::Debug for Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Extractor")
            .field("token_mode", &self.token_mode)
            .field("object_mode", &self.object_mode)
            .field("interrogation_mode", &self.interrogation_mode)
            .field("lexicon", &self.lexicon.len())
            .field("stopwords", &self.stopwords.len())
            .field("backend", &self.backend.is_some())
            .finish()
    }
}

impl Extractor {
    pub fn from_config(config: &ExtractorConfig, backend: Option<Arc<dyn AnalysisBackend>>) -> Result<Self> {
        let lexicon = match &config.lexicon_path {
            Some(p) => WordList::load(p)?,
            None => WordList::default_nouns(),
        };
        let stopwords = match &config.stopword_path {
            Some(p) => WordList::load(p)?,
            None => WordList::default_stopwords(),
        };
        let rules = match &config.rules_path {
            Some(p) => RuleTable::load(p)?,
            None => RuleTable::default(),
        };
        let object_prompt = match &config.object_prompt_path {
            Some(p) => Template::load(p)?,
            None => Template::new("{text}"),
        };
        let interrogation_prompt = match &config.interrogation_prompt_path {
            Some(p) => Template::load(p)?,
            None => Template::new("{text}"),
        };
        if config.token_mode == TokenMode::BuiltinLexicon && lexicon.is_empty() {
            return Err(Error::usage("noun lexicon is empty"));
        }
        if stopwords.is_empty() {
            return Err(Error::usage("stopword list is empty"));
        }
        if config.needs_backend() && backend.is_none() {
            return Err(Error::usage("remote extraction mode configured without a backend"));
        }
        Ok(Extractor {
            token_mode: config.token_mode,
            object_mode: config.object_mode,
            interrogation_mode: config.interrogation_mode,
            lexicon,
            stopwords,
            rules,
            object_prompt,
            interrogation_prompt,
            backend,
        })
    }

    /// Offline extractor with the embedded word lists.
    pub fn builtin() -> Self {
        Self::from_config(&ExtractorConfig::default(), None).expect("embedded lists are valid")
    }

    pub fn with_lists(mut self, lexicon: WordList, stopwords: WordList) -> Self {
        self.lexicon = lexicon;
        self.stopwords = stopwords;
        self
    }

    fn backend(&self) -> Result<&dyn AnalysisBackend> {
        self.backend
            .as_deref()
            .ok_or_else(|| Error::usage("remote extraction mode configured without a backend"))
    }

    pub fn extract_token_entities(&self, inst: &DataInstance) -> Result<EntitySet> {
        let text = inst.full_text();
        let mut out = EntitySet::new();
        match self.token_mode {
            TokenMode::BuiltinLexicon => {
                for w in words(&text) {
                    if self.stopwords.contains(&w) {
                        continue;
                    }
                    if let Some(form) = lexicon_form(&w, &self.lexicon) {
                        if !self.stopwords.contains(&form) {
                            out.extend(EntityKey::new(&form));
                        }
                    }
                }
            }
            TokenMode::RemotePos => {
                let clean = text.replace(IMAGE_PLACEHOLDER, " ");
                for noun in self.backend()?.pos_nouns(&clean)? {
                    let c = canonicalize(&noun);
                    let form = lexicon_form(&c, &self.lexicon).unwrap_or(c);
                    if !self.stopwords.contains(&form) {
                        out.extend(EntityKey::new(&form));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns the object set and a warning when the instance had to be
    /// skipped.
    pub fn extract_object_entities(
        &self,
        inst: &DataInstance,
        tokens: &EntitySet,
    ) -> Result<(EntitySet, Option<Warning>)> {
        if !inst.has_image() {
            return Ok((
                EntitySet::new(),
                Some(Warning::new(&inst.id, "no image; object set empty")),
            ));
        }
        match self.object_mode {
            ObjectMode::FromAnnotations => match inst.entities.get(&Perspective::Object) {
                Some(attached) => Ok((
                    attached.iter().filter_map(|k| EntityKey::new(k.as_str())).collect(),
                    None,
                )),
                None => Ok((
                    EntitySet::new(),
                    Some(Warning::new(&inst.id, "no object annotations; object set empty")),
                )),
            },
            ObjectMode::RemoteLlmPlusGrounding => {
                let backend = self.backend()?;
                let text = inst.full_text().replace(IMAGE_PLACEHOLDER, " ");
                let prompt = self.object_prompt.render(&[("text", &text)]);
                let mut candidates: EntitySet = tokens.clone();
                for o in backend.propose_objects(&prompt)? {
                    candidates.extend(EntityKey::new(&o));
                }
                let list: Vec<String> = candidates.iter().map(|k| k.as_str().to_owned()).collect();
                let image = inst.image_ref.as_deref().unwrap_or_default();
                let detected = backend.ground(image, &list)?;
                Ok((
                    detected
                        .iter()
                        .filter_map(|d| EntityKey::new(d))
                        .filter(|k| candidates.contains(k))
                        .collect(),
                    None,
                ))
            }
        }
    }

    pub fn extract_interrogation_entities(&self, inst: &DataInstance) -> Result<EntitySet> {
        let human: Vec<&str> = inst.human_text().collect();
        let text = human.join("\n");
        match self.interrogation_mode {
            InterrogationMode::BuiltinRules => Ok(interrogative_forms(&text, &self.rules)),
            InterrogationMode::RemoteLlm => {
                let clean = text.replace(IMAGE_PLACEHOLDER, " ");
                let prompt = self.interrogation_prompt.render(&[("text", &clean)]);
                Ok(self
                    .backend()?
                    .interrogations(&prompt)?
                    .iter()
                    .filter_map(|f| EntityKey::new(f))
                    .collect())
            }
        }
    }

    /// Fills all four perspective sets.
    pub fn annotate(&self, inst: &DataInstance) -> Result<(DataInstance, Option<Warning>)> {
        let tokens = self.extract_token_entities(inst)?;
        let (objects, warning) = self.extract_object_entities(inst, &tokens)?;
        let co = build_cooccurrence_entities(&objects);
        let int = self.extract_interrogation_entities(inst)?;
        let mut out = inst.clone();
        out.entities.clear();
        out.entities.insert(Perspective::Token, tokens);
        out.entities.insert(Perspective::Object, objects);
        out.entities.insert(Perspective::CoOccurrence, co);
        out.entities.insert(Perspective::Interrogation, int);
        Ok((out, warning))
    }
}

/// Annotates a stream in fixed-size chunks on `pool`, preserving order.
/// Per-instance warnings accumulate in [`AnnotateStream::warnings`].
pub struct AnnotateStream<'a, I> {
    input: I,
    extractor: &'a Extractor,
    pool: &'a rayon::ThreadPool,
    chunk: usize,
    ready: VecDeque<DataInstance>,
    warnings: Vec<Warning>,
    done: bool,
}

impl<I> AnnotateStream<'_, I> {
    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn into_warnings(self) -> Vec<Warning> {
        self.warnings
    }
}

pub fn annotate_corpus<'a, I>(
    input: I,
    extractor: &'a Extractor,
    pool: &'a rayon::ThreadPool,
) -> AnnotateStream<'a, I::IntoIter>
where
    I: IntoIterator<Item = Result<DataInstance>>,
{
    AnnotateStream {
        input: input.into_iter(),
        extractor,
        pool,
        chunk: 1024,
        ready: VecDeque::new(),
        warnings: Vec::new(),
        done: false,
    }
}

impl<I: Iterator<Item = Result<DataInstance>>> Iterator for AnnotateStream<'_, I> {
    type Item = Result<DataInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(x) = self.ready.pop_front() {
            return Some(Ok(x));
        }
        if self.done {
            return None;
        }
        let mut batch = Vec::with_capacity(self.chunk);
        for item in self.input.by_ref().take(self.chunk) {
            match item {
                Ok(inst) => batch.push(inst),
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
        if batch.is_empty() {
            self.done = true;
            return None;
        }
        let extractor = self.extractor;
        let results: Vec<Result<(DataInstance, Option<Warning>)>> = self
            .pool
            .install(|| batch.par_iter().map(|inst| extractor.annotate(inst)).collect());
        for r in results {
            match r {
                Ok((inst, w)) => {
                    self.warnings.extend(w);
                    self.ready.push_back(inst);
                }
                Err(e) => {
                    self.done = true;
                    self.ready.clear();
                    return Some(Err(e));
                }
            }
        }
        self.ready.pop_front().map(Ok)
    }
}
