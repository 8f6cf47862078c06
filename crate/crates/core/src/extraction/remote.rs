//! Wire contracts for the external analysis models and an offline mock.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::lexicon::{RuleTable, WordList};
use super::{interrogative_forms, words};
use crate::error::Result;
use crate::http::JsonClient;

/// POS parser, object proposer, visual grounding and interrogation
/// extractor, as seen by the analysis stage.
pub trait AnalysisBackend: Send + Sync {
    fn pos_nouns(&self, text: &str) -> Result<Vec<String>>;
    fn propose_objects(&self, text: &str) -> Result<Vec<String>>;
    fn ground(&self, image_ref: &str, candidates: &[String]) -> Result<Vec<String>>;
    fn interrogations(&self, text: &str) -> Result<Vec<String>>;
}

#[derive(Serialize)]
struct TextReq<'a> {
    text: &'a str,
}

#[derive(Serialize)]
struct GroundReq<'a> {
    image_ref: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct NounsResp {
    nouns: Vec<String>,
}

#[derive(Deserialize)]
struct ObjectsResp {
    objects: Vec<String>,
}

#[derive(Deserialize)]
struct GroundResp {
    detected: Vec<String>,
}

#[derive(Deserialize)]
struct FormsResp {
    forms: Vec<String>,
}

/// `POST /pos`, `/extract_objects`, `/ground`, `/interrogations`.
#[derive(Debug, Clone)]
pub struct HttpAnalysisBackend {
    client: JsonClient,
}

impl HttpAnalysisBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpAnalysisBackend {
            client: JsonClient::new(base_url, timeout),
        }
    }
}

impl AnalysisBackend for HttpAnalysisBackend {
    fn pos_nouns(&self, text: &str) -> Result<Vec<String>> {
        let r: NounsResp = self.client.post("/pos", &TextReq { text })?;
        Ok(r.nouns)
    }

    fn propose_objects(&self, text: &str) -> Result<Vec<String>> {
        let r: ObjectsResp = self.client.post("/extract_objects", &TextReq { text })?;
        Ok(r.objects)
    }

    fn ground(&self, image_ref: &str, candidates: &[String]) -> Result<Vec<String>> {
        let r: GroundResp = self.client.post("/ground", &GroundReq { image_ref, candidates })?;
        Ok(r.detected)
    }

    fn interrogations(&self, text: &str) -> Result<Vec<String>> {
        let r: FormsResp = self.client.post("/interrogations", &TextReq { text })?;
        Ok(r.forms)
    }
}

/// Deterministic in-process stand-in for the remote models.
///
/// Nouns and object proposals are the words of the text found in the
/// respective vocabularies; grounding keeps the candidates on the accept
/// list for that image (falling back to the global list).
#[derive(Debug, Clone, Default)]
pub struct MockAnalysisBackend {
    pub nouns: WordList,
    pub objects: WordList,
    pub accept: BTreeSet<String>,
    pub accept_by_image: BTreeMap<String, BTreeSet<String>>,
    pub rules: RuleTable,
}

impl MockAnalysisBackend {
    pub fn new(nouns: WordList, objects: WordList) -> Self {
        MockAnalysisBackend {
            nouns,
            objects,
            ..Default::default()
        }
    }

    pub fn accepting<I: IntoIterator<Item = S>, S: Into<String>>(mut self, accept: I) -> Self {
        self.accept = accept.into_iter().map(Into::into).collect();
        self
    }
}

impl AnalysisBackend for MockAnalysisBackend {
    fn pos_nouns(&self, text: &str) -> Result<Vec<String>> {
        Ok(words(text).filter(|w| self.nouns.contains(w)).collect())
    }

    fn propose_objects(&self, text: &str) -> Result<Vec<String>> {
        Ok(words(text).filter(|w| self.objects.contains(w)).collect())
    }

    fn ground(&self, image_ref: &str, candidates: &[String]) -> Result<Vec<String>> {
        let accept = self.accept_by_image.get(image_ref).unwrap_or(&self.accept);
        Ok(candidates.iter().filter(|c| accept.contains(*c)).cloned().collect())
    }

    fn interrogations(&self, text: &str) -> Result<Vec<String>> {
        Ok(interrogative_forms(text, &self.rules)
            .into_iter()
            .map(|k| k.to_string())
            .collect())
    }
}
