//! Corpus and evaluation-log records, streaming readers and writers.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entity::{canonicalize, Entities, EntityKey, EntitySet, Perspective};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "human")]
    Human,
    #[serde(rename = "gpt")]
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "from")]
    pub role: Role,
    #[serde(rename = "value")]
    pub text: String,
}

impl Turn {
    pub fn human(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Human,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// One image + conversation training record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataInstance {
    pub id: String,
    pub image_ref: Option<String>,
    pub conversation: Vec<Turn>,
    /// Present keys mark the perspectives this instance was annotated for.
    pub entities: Entities,
}

impl DataInstance {
    pub fn new(id: impl Into<String>, image_ref: Option<String>, conversation: Vec<Turn>) -> Self {
        DataInstance {
            id: id.into(),
            image_ref,
            conversation,
            entities: Entities::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::data("instance id is empty"));
        }
        if self.conversation.is_empty() {
            return Err(Error::data(format!("instance `{}` has no conversation", self.id)));
        }
        for (i, turn) in self.conversation.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::Human } else { Role::Assistant };
            if turn.role != expected {
                return Err(Error::data(format!(
                    "instance `{}`: turn {i} should be {expected:?}",
                    self.id
                )));
            }
            if turn.text.is_empty() && !(turn.role == Role::Human && self.has_image()) {
                return Err(Error::data(format!("instance `{}`: turn {i} is empty", self.id)));
            }
        }
        Ok(())
    }

    pub fn has_image(&self) -> bool {
        self.image_ref.as_deref().is_some_and(|s| !s.trim().is_empty())
    }

    /// Entities for a perspective, or an error if the instance was never
    /// annotated for it.
    pub fn entities_for(&self, perspective: Perspective) -> Result<&EntitySet> {
        self.entities.get(&perspective).ok_or_else(|| Error::Unannotated {
            id: self.id.clone(),
            perspective: perspective.as_str(),
        })
    }

    pub fn human_text(&self) -> impl Iterator<Item = &str> {
        self.conversation
            .iter()
            .filter(|t| t.role == Role::Human)
            .map(|t| t.text.as_str())
    }

    /// All turns joined with newlines.
    pub fn full_text(&self) -> String {
        let mut s = String::new();
        for t in &self.conversation {
            if !s.is_empty() {
                s.push('\n');
            }
            s.push_str(&t.text);
        }
        s
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawInstance {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    conversations: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<BTreeMap<Perspective, Vec<String>>>,
}

fn parse_entities(raw: BTreeMap<Perspective, Vec<String>>) -> Result<Entities> {
    let mut out = Entities::new();
    for (p, list) in raw {
        let set = list
            .iter()
            .map(|s| EntityKey::parse(p, s))
            .collect::<Result<EntitySet>>()?;
        out.insert(p, set);
    }
    Ok(out)
}

impl TryFrom<RawInstance> for DataInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let inst = DataInstance {
            id: raw.id,
            image_ref: raw.image,
            conversation: raw.conversations,
            entities: raw.entities.map(parse_entities).transpose()?.unwrap_or_default(),
        };
        inst.validate()?;
        Ok(inst)
    }
}

impl From<&DataInstance> for RawInstance {
    fn from(inst: &DataInstance) -> Self {
        RawInstance {
            id: inst.id.clone(),
            image: inst.image_ref.clone(),
            conversations: inst.conversation.clone(),
            entities: (!inst.entities.is_empty()).then(|| {
                inst.entities
                    .iter()
                    .map(|(p, set)| (*p, set.iter().map(|k| k.as_str().to_owned()).collect()))
                    .collect()
            }),
        }
    }
}

impl Serialize for DataInstance {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawInstance::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DataInstance {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawInstance::deserialize(deserializer)?;
        DataInstance::try_from(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    LlavaJsonl,
    LlavaJsonArray,
}

impl CorpusFormat {
    /// Guesses from the file extension: `.json` is an array, anything else
    /// line-delimited.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => CorpusFormat::LlavaJsonArray,
            _ => CorpusFormat::LlavaJsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llava_jsonl" | "jsonl" => Ok(CorpusFormat::LlavaJsonl),
            "llava_json_array" | "json" => Ok(CorpusFormat::LlavaJsonArray),
            other => Err(Error::usage(format!("unknown corpus format `{other}`"))),
        }
    }
}

enum Source {
    Lines(Lines<BufReader<File>>),
    Array(std::vec::IntoIter<serde_json::Value>),
}

/// Streaming corpus reader. JSONL is read line by line; the JSON-array
/// variant is parsed up front and then converted record by record.
pub struct CorpusReader {
    path: PathBuf,
    source: Source,
    format: CorpusFormat,
    line: usize,
    /// Id fingerprints; a hit is confirmed against the file before it is
    /// reported, so memory stays at eight bytes per record.
    seen: HashSet<u64>,
    count: usize,
    failed: bool,
}

impl CorpusReader {
    pub fn records_read(&self) -> usize {
        self.count
    }

    fn parse_err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn accept(&mut self, raw: std::result::Result<RawInstance, serde_json::Error>) -> Result<DataInstance> {
        let raw = raw.map_err(|e| self.parse_err(e.to_string()))?;
        let inst = DataInstance::try_from(raw).map_err(|e| self.parse_err(e.to_string()))?;
        if !self.seen.insert(crate::rng::hash64(0, &inst.id, "id")) && self.seen_before(&inst.id)? {
            return Err(Error::DuplicateId(inst.id));
        }
        self.count += 1;
        Ok(inst)
    }
}

#[derive(Deserialize)]
struct IdOnly {
    id: String,
}

impl CorpusReader {
    /// Whether a record before the current one carries `id`.
    fn seen_before(&self, id: &str) -> Result<bool> {
        let io = |e| Error::io(&self.path, e);
        let file = BufReader::new(File::open(&self.path).map_err(io)?);
        let earlier = self.line - 1;
        Ok(match self.format {
            CorpusFormat::LlavaJsonl => {
                let mut lines = file.lines().take(earlier);
                lines.try_fold(false, |found, l| {
                    let l = l.map_err(io)?;
                    let hit = !l.trim().is_empty() && serde_json::from_str::<IdOnly>(&l).is_ok_and(|r| r.id == id);
                    Ok::<_, Error>(found || hit)
                })?
            }
            CorpusFormat::LlavaJsonArray => serde_json::from_reader::<_, Vec<IdOnly>>(file)
                .map_err(|e| self.parse_err(e.to_string()))?
                .iter()
                .take(earlier)
                .any(|r| r.id == id),
        })
    }
}

impl Iterator for CorpusReader {
    type Item = Result<DataInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = loop {
            match &mut self.source {
                Source::Lines(lines) => {
                    let line = lines.next()?;
                    self.line += 1;
                    match line {
                        Err(e) => break Err(Error::io(self.path.clone(), e)),
                        Ok(l) if l.trim().is_empty() => continue,
                        Ok(l) => {
                            let raw = serde_json::from_str::<RawInstance>(&l);
                            break self.accept(raw);
                        }
                    }
                }
                Source::Array(values) => {
                    let value = values.next()?;
                    self.line += 1;
                    let raw = serde_json::from_value::<RawInstance>(value);
                    break self.accept(raw);
                }
            }
        };
        self.failed = item.is_err();
        Some(item)
    }
}

/// Opens a corpus for streaming. For the array format, `line` in errors is
/// the 1-based record index.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusReader> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let source = match format {
        CorpusFormat::LlavaJsonl => Source::Lines(BufReader::new(file).lines()),
        CorpusFormat::LlavaJsonArray => {
            let values: Vec<serde_json::Value> =
                serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: e.line(),
                    msg: e.to_string(),
                })?;
            Source::Array(values.into_iter())
        }
    };
    Ok(CorpusReader {
        path,
        source,
        format,
        line: 0,
        seen: HashSet::new(),
        count: 0,
        failed: false,
    })
}

/// Reads the whole corpus into memory.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<DataInstance>> {
    let path = path.as_ref();
    load_corpus(path, CorpusFormat::from_path(path))?.collect()
}

/// Writes instances in order and returns the count. Parent directories are
/// created as needed.
pub fn write_corpus<I>(instances: I, path: impl AsRef<Path>, format: CorpusFormat) -> Result<usize>
where
    I: IntoIterator,
    I::Item: Borrow<DataInstance>,
{
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut n = 0usize;
    if format == CorpusFormat::LlavaJsonArray {
        w.write_all(b"[").map_err(io)?;
    }
    for inst in instances {
        if format == CorpusFormat::LlavaJsonArray && n > 0 {
            w.write_all(b",").map_err(io)?;
        }
        serde_json::to_writer(&mut w, inst.borrow()).map_err(|e| io(e.into()))?;
        if format == CorpusFormat::LlavaJsonl {
            w.write_all(b"\n").map_err(io)?;
        }
        n += 1;
    }
    if format == CorpusFormat::LlavaJsonArray {
        w.write_all(b"]\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matcher {
    Exact,
    #[default]
    Normalized,
}

impl Matcher {
    pub fn matches(self, predicted: &str, gold: &str) -> bool {
        match self {
            Matcher::Exact => predicted == gold,
            Matcher::Normalized => normalize_answer(predicted) == normalize_answer(gold),
        }
    }
}

impl FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Matcher::Exact),
            "normalized" => Ok(Matcher::Normalized),
            other => Err(Error::usage(format!("unknown matcher `{other}`"))),
        }
    }
}

/// Casefold, drop punctuation, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let stripped: String = s.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    canonicalize(&stripped)
}

/// One benchmark answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub case_id: String,
    pub question: String,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
    pub image_ref: Option<String>,
    pub entities: Entities,
}

impl EvalCase {
    /// A single-turn instance view used for entity extraction.
    pub fn as_instance(&self) -> DataInstance {
        DataInstance {
            id: self.case_id.clone(),
            image_ref: self.image_ref.clone(),
            conversation: vec![Turn::human(self.question.clone())],
            entities: self.entities.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEvalCase {
    case_id: String,
    question: String,
    prediction: String,
    gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<BTreeMap<Perspective, Vec<String>>>,
}

impl Serialize for EvalCase {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawEvalCase {
            case_id: self.case_id.clone(),
            question: self.question.clone(),
            prediction: self.predicted.clone(),
            gold: Some(self.gold.clone()),
            image: self.image_ref.clone(),
            entities: (!self.entities.is_empty()).then(|| {
                self.entities
                    .iter()
                    .map(|(p, s)| (*p, s.iter().map(|k| k.as_str().to_owned()).collect()))
                    .collect()
            }),
        }
        .serialize(serializer)
    }
}

/// Reads an evaluation log (JSONL). `correct` is computed with `matcher`.
pub fn load_eval_log(path: impl AsRef<Path>, matcher: Matcher) -> Result<Vec<EvalCase>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let raw: RawEvalCase = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let gold = raw
            .gold
            .ok_or_else(|| err(format!("case `{}` has no gold answer", raw.case_id)))?;
        let entities = raw
            .entities
            .map(parse_entities)
            .transpose()
            .map_err(|e| err(e.to_string()))?
            .unwrap_or_default();
        out.push(EvalCase {
            correct: matcher.matches(&raw.prediction, &gold),
            case_id: raw.case_id,
            question: raw.question,
            predicted: raw.prediction,
            gold,
            image_ref: raw.image,
            entities,
        });
    }
    Ok(out)
}

pub fn write_eval_log<'a>(cases: impl IntoIterator<Item = &'a EvalCase>, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut n = 0;
    for c in cases {
        serde_json::to_writer(&mut w, c).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
        n += 1;
    }
    w.flush().map_err(io)?;
    Ok(n)
}
