//! Word lists and the synonym lexicon.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::entity::canonicalize;
use crate::error::{Error, Result};

const DEFAULT_NOUNS: &str = include_str!("../../data/nouns.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
const DEFAULT_INTERROGATIONS: &str = include_str!("../../data/interrogations.txt");

/// A set of canonical words loaded from a one-per-line file with `#`
/// comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordList(BTreeSet<String>);

impl WordList {
    pub fn parse(text: &str) -> Self {
        WordList(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .map(canonicalize)
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn default_nouns() -> Self {
        Self::parse(DEFAULT_NOUNS)
    }

    pub fn default_stopwords() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl FromIterator<String> for WordList {
    fn from_iter<T: IntoIterator<Item = String>>(iter: T) -> Self {
        WordList(
            iter.into_iter()
                .map(|s| canonicalize(&s))
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }
}

/// Ordered interrogative constructions, longest (in words) first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    forms: Vec<Vec<String>>,
}

impl RuleTable {
    pub fn parse(text: &str) -> Self {
        let mut forms: Vec<Vec<String>> = WordList::parse(text)
            .iter()
            .map(|f| f.split(' ').map(str::to_owned).collect())
            .collect();
        forms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        RuleTable { forms }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    /// The longest construction that prefixes `words`.
    pub fn leading_form(&self, words: &[&str]) -> Option<String> {
        self.forms
            .iter()
            .find(|f| f.len() <= words.len() && f.iter().zip(words).all(|(a, b)| a == b))
            .map(|f| f.join(" "))
    }
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::parse(DEFAULT_INTERROGATIONS)
    }
}

/// Head form to ordered synonym list.
///
/// File format: `head: syn1, syn2` per line, `#` comments. Self-references
/// are dropped and entries left empty are discarded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::data(format!("synonym line {}: expected `head: syn, ...`", i + 1)))?;
            let head = canonicalize(head);
            if head.is_empty() {
                return Err(Error::data(format!("synonym line {}: empty head", i + 1)));
            }
            let list = entries.entry(head.clone()).or_default();
            for syn in rest.split(',').map(canonicalize) {
                if !syn.is_empty() && syn != head && !list.contains(&syn) {
                    list.push(syn);
                }
            }
        }
        entries.retain(|_, v| !v.is_empty());
        Ok(SynonymLexicon { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn synonyms(&self, head: &str) -> &[String] {
        self.entries.get(head).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
