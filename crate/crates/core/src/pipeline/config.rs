//! Run settings and the flat `key = value` settings file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::dataset::{CorpusFormat, Matcher};
use crate::entity::Perspective;
use crate::error::{Error, Result};
use crate::evalsplit::{parse_ratios, ScoreMode};
use crate::extraction::{ExtractorConfig, InterrogationMode, ObjectMode, TokenMode};
use crate::synthesis::{SynthesisMode, DEFAULT_IMAGE_PROMPT};

pub const MOCK_ENV: &str = "ADR_MOCK_BACKENDS";

pub const DEFAULT_TAUS: [(Perspective, u64); 4] = [
    (Perspective::Token, 120),
    (Perspective::Object, 304),
    (Perspective::CoOccurrence, 24),
    (Perspective::Interrogation, 4895),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(Error::usage(format!("unknown backend `{other}` (mock|http)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub perspectives: Vec<Perspective>,
    pub taus: BTreeMap<Perspective, u64>,
    pub n_p: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
    /// Worker threads, 0 for one per core.
    pub jobs: usize,
    /// Target corpus size after synthesis; `None` restores the input size.
    pub budget: Option<usize>,
    pub backend: BackendKind,
    pub analysis_endpoint: Option<String>,
    pub synthesis_endpoint: Option<String>,
    pub timeout_secs: u64,
    pub token_mode: TokenMode,
    pub object_mode: ObjectMode,
    pub interrogation_mode: InterrogationMode,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub object_prompt: Option<PathBuf>,
    pub interrogation_prompt: Option<PathBuf>,
    pub expand_template: Option<PathBuf>,
    pub rewrite_template: Option<PathBuf>,
    pub image_prompt: String,
    pub synthesis_mode: SynthesisMode,
    pub ratios: Vec<f64>,
    pub score_mode: ScoreMode,
    pub matcher: Matcher,
    pub format: Option<CorpusFormat>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            perspectives: Perspective::ALL.to_vec(),
            taus: DEFAULT_TAUS.into_iter().collect(),
            n_p: None,
            alpha: 1.0,
            seed: 42,
            jobs: 0,
            budget: None,
            backend: BackendKind::Mock,
            analysis_endpoint: None,
            synthesis_endpoint: None,
            timeout_secs: 60,
            token_mode: TokenMode::BuiltinLexicon,
            object_mode: ObjectMode::FromAnnotations,
            interrogation_mode: InterrogationMode::BuiltinRules,
            lexicon: None,
            stopwords: None,
            rules: None,
            synonyms: None,
            object_prompt: None,
            interrogation_prompt: None,
            expand_template: None,
            rewrite_template: None,
            image_prompt: DEFAULT_IMAGE_PROMPT.to_owned(),
            synthesis_mode: SynthesisMode::All,
            ratios: vec![0.05, 0.1, 0.15, 0.2],
            score_mode: ScoreMode::Raw,
            matcher: Matcher::Normalized,
            format: None,
        }
    }
}

const PATH_KEYS: [&str; 8] = [
    "lexicon",
    "stopwords",
    "rules",
    "synonyms",
    "object_prompt",
    "interrogation_prompt",
    "expand_template",
    "rewrite_template",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::usage(format!("bad value `{value}` for `{key}`")))
}

fn optional(value: &str) -> Option<&str> {
    (!value.is_empty()).then_some(value)
}

/// Parses `tok=120,obj=304` into a tau map.
pub fn parse_taus(value: &str) -> Result<BTreeMap<Perspective, u64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (p, t) = pair
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("expected perspective=tau, got `{pair}`")))?;
            let tau: u64 = parse("tau", t.trim())?;
            if tau == 0 {
                return Err(Error::usage("tau must be at least 1"));
            }
            Ok((p.trim().parse()?, tau))
        })
        .collect()
}

impl Settings {
    /// Sets one key. Keys and values match the settings file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "perspectives" => self.perspectives = Perspective::parse_list(value)?,
            "tau" => self.taus.extend(parse_taus(value)?),
            k if k.starts_with("tau.") => {
                self.taus.extend(parse_taus(&format!("{}={value}", &k[4..]))?);
            }
            "n_p" => self.n_p = optional(value).map(|v| parse(key, v)).transpose()?,
            "alpha" => self.alpha = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "budget" => self.budget = optional(value).map(|v| parse(key, v)).transpose()?,
            "backend" => self.backend = value.parse()?,
            "analysis_endpoint" => self.analysis_endpoint = optional(value).map(str::to_owned),
            "synthesis_endpoint" => self.synthesis_endpoint = optional(value).map(str::to_owned),
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "token_mode" => {
                self.token_mode = match value {
                    "builtin" | "builtin_lexicon" => TokenMode::BuiltinLexicon,
                    "remote" | "remote_pos" => TokenMode::RemotePos,
                    _ => return Err(Error::usage(format!("bad token_mode `{value}` (builtin|remote)"))),
                }
            }
            "object_mode" => {
                self.object_mode = match value {
                    "annotations" | "from_annotations" => ObjectMode::FromAnnotations,
                    "remote" | "remote_llm_plus_grounding" => ObjectMode::RemoteLlmPlusGrounding,
                    _ => return Err(Error::usage(format!("bad object_mode `{value}` (annotations|remote)"))),
                }
            }
            "interrogation_mode" => {
                self.interrogation_mode = match value {
                    "builtin" | "builtin_rules" => InterrogationMode::BuiltinRules,
                    "remote" | "remote_llm" => InterrogationMode::RemoteLlm,
                    _ => {
                        return Err(Error::usage(format!(
                            "bad interrogation_mode `{value}` (builtin|remote)"
                        )))
                    }
                }
            }
            "lexicon" => self.lexicon = optional(value).map(PathBuf::from),
            "stopwords" => self.stopwords = optional(value).map(PathBuf::from),
            "rules" => self.rules = optional(value).map(PathBuf::from),
            "synonyms" => self.synonyms = optional(value).map(PathBuf::from),
            "object_prompt" => self.object_prompt = optional(value).map(PathBuf::from),
            "interrogation_prompt" => self.interrogation_prompt = optional(value).map(PathBuf::from),
            "expand_template" => self.expand_template = optional(value).map(PathBuf::from),
            "rewrite_template" => self.rewrite_template = optional(value).map(PathBuf::from),
            "image_prompt" => self.image_prompt = value.to_owned(),
            "synthesis_mode" => {
                self.synthesis_mode = match value {
                    "all" => SynthesisMode::All,
                    "token_rewrite" => SynthesisMode::TokenRewrite,
                    _ => {
                        return Err(Error::usage(format!(
                            "bad synthesis_mode `{value}` (all|token_rewrite)"
                        )))
                    }
                }
            }
            "ratios" => self.ratios = parse_ratios(value)?,
            "score_mode" => self.score_mode = value.parse()?,
            "matcher" => self.matcher = value.parse()?,
            "format" => self.format = optional(value).map(str::parse).transpose()?,
            other => return Err(Error::usage(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Applies a settings file. Blank lines and `#` comments are skipped;
    /// relative paths are resolved against the file's directory.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let value = if PATH_KEYS.contains(&key) && !value.is_empty() && Path::new(value).is_relative() {
                base.join(value).to_string_lossy().into_owned()
            } else {
                value.to_owned()
            };
            self.set(key, &value).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Forces mock backends when the override variable is `1`.
    pub fn apply_env(&mut self) {
        if std::env::var(MOCK_ENV).is_ok_and(|v| v == "1") {
            self.backend = BackendKind::Mock;
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.perspectives {
            if !self.taus.contains_key(p) {
                return Err(Error::usage(format!("no tau for perspective `{p}`")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::usage(format!("alpha = {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }

    pub fn require_n_p(&self) -> Result<usize> {
        self.n_p
            .ok_or_else(|| Error::usage("n_p is required (try 0, 1, 2 or 3); pass --np or set n_p in the config"))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn tau(&self, p: Perspective) -> u64 {
        self.taus.get(&p).copied().unwrap_or(DEFAULT_TAUS[p.index()].1)
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        ExtractorConfig {
            token_mode: self.token_mode,
            object_mode: self.object_mode,
            interrogation_mode: self.interrogation_mode,
            lexicon_path: self.lexicon.clone(),
            stopword_path: self.stopwords.clone(),
            rules_path: self.rules.clone(),
            object_prompt_path: self.object_prompt.clone(),
            interrogation_prompt_path: self.interrogation_prompt.clone(),
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::usage(format!("cannot start {} worker threads: {e}", self.jobs)))
    }

    /// Every setting as `key = value`, in the file syntax.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let list = |v: Vec<String>| v.join(",");
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put(
            "perspectives",
            list(self.perspectives.iter().map(|p| p.to_string()).collect()),
        );
        for (p, t) in &self.taus {
            put(&format!("tau.{p}"), t.to_string());
        }
        put("n_p", self.n_p.map(|n| n.to_string()).unwrap_or_default());
        put("alpha", self.alpha.to_string());
        put("seed", self.seed.to_string());
        put("jobs", self.jobs.to_string());
        put("budget", self.budget.map(|n| n.to_string()).unwrap_or_default());
        put(
            "backend",
            if self.backend == BackendKind::Http {
                "http"
            } else {
                "mock"
            }
            .into(),
        );
        put("analysis_endpoint", self.analysis_endpoint.clone().unwrap_or_default());
        put(
            "synthesis_endpoint",
            self.synthesis_endpoint.clone().unwrap_or_default(),
        );
        put("timeout_secs", self.timeout_secs.to_string());
        put(
            "token_mode",
            if self.token_mode == TokenMode::RemotePos {
                "remote"
            } else {
                "builtin"
            }
            .into(),
        );
        let object_mode = if self.object_mode == ObjectMode::RemoteLlmPlusGrounding {
            "remote"
        } else {
            "annotations"
        };
        put("object_mode", object_mode.into());
        let int_mode = if self.interrogation_mode == InterrogationMode::RemoteLlm {
            "remote"
        } else {
            "builtin"
        };
        put("interrogation_mode", int_mode.into());
        put("lexicon", path(&self.lexicon));
        put("stopwords", path(&self.stopwords));
        put("rules", path(&self.rules));
        put("synonyms", path(&self.synonyms));
        put("object_prompt", path(&self.object_prompt));
        put("interrogation_prompt", path(&self.interrogation_prompt));
        put("expand_template", path(&self.expand_template));
        put("rewrite_template", path(&self.rewrite_template));
        put("image_prompt", self.image_prompt.clone());
        let mode = if self.synthesis_mode == SynthesisMode::TokenRewrite {
            "token_rewrite"
        } else {
            "all"
        };
        put("synthesis_mode", mode.into());
        put("ratios", list(self.ratios.iter().map(f64::to_string).collect()));
        put(
            "score_mode",
            if self.score_mode == ScoreMode::Normalized {
                "normalized"
            } else {
                "raw"
            }
            .into(),
        );
        put(
            "matcher",
            if self.matcher == Matcher::Exact {
                "exact"
            } else {
                "normalized"
            }
            .into(),
        );
        let format = match self.format {
            Some(CorpusFormat::LlavaJsonl) => "jsonl",
            Some(CorpusFormat::LlavaJsonArray) => "json",
            None => "",
        };
        put("format", format.into());
        m
    }
}
