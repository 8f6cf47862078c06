//! Generation backends for images and text.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::Turn;
use crate::error::Result;
use crate::http::JsonClient;
use crate::rng::hash64;

pub const CAPTION_MARKER: &str = "CAPTION:";
pub const SUBSTITUTIONS_MARKER: &str = "SUBSTITUTIONS:";
pub const CONVERSATION_MARKER: &str = "CONVERSATION:";

pub trait SynthesisBackend: Send + Sync {
    /// Returns a reference to the generated image.
    fn image_gen(&self, image_ref: &str, prompt: &str) -> Result<String>;
    fn caption(&self, image_ref: &str) -> Result<String>;
    fn chat(&self, prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct ImageGenReq<'a> {
    image_ref: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ImageGenResp {
    image_ref: String,
}

#[derive(Serialize)]
struct CaptionReq<'a> {
    image_ref: &'a str,
}

#[derive(Deserialize)]
struct CaptionResp {
    caption: String,
}

#[derive(Serialize)]
struct ChatReq<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ChatResp {
    text: String,
}

/// `POST /image_gen`, `/caption`, `/chat`.
#[derive(Debug, Clone)]
pub struct HttpSynthesisBackend {
    client: JsonClient,
}

impl HttpSynthesisBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpSynthesisBackend {
            client: JsonClient::new(base_url, timeout),
        }
    }
}

impl SynthesisBackend for HttpSynthesisBackend {
    fn image_gen(&self, image_ref: &str, prompt: &str) -> Result<String> {
        let r: ImageGenResp = self.client.post("/image_gen", &ImageGenReq { image_ref, prompt })?;
        Ok(r.image_ref)
    }

    fn caption(&self, image_ref: &str) -> Result<String> {
        let r: CaptionResp = self.client.post("/caption", &CaptionReq { image_ref })?;
        Ok(r.caption)
    }

    fn chat(&self, prompt: &str) -> Result<String> {
        let r: ChatResp = self.client.post("/chat", &ChatReq { prompt })?;
        Ok(r.text)
    }
}

/// Offline backend with deterministic outputs.
///
/// Generated images are `syn/<hash>/<source ref>`; captions list the
/// objects registered for the source image; chat either expands a caption
/// or applies the requested word substitutions.
#[derive(Debug, Clone, Default)]
pub struct MockSynthesisBackend {
    pub objects_by_image: BTreeMap<String, Vec<String>>,
    /// Return rewrites unchanged, ignoring the substitutions.
    pub broken_rewriter: bool,
}

impl MockSynthesisBackend {
    pub fn new(objects_by_image: BTreeMap<String, Vec<String>>) -> Self {
        MockSynthesisBackend {
            objects_by_image,
            broken_rewriter: false,
        }
    }

    fn source_of(image_ref: &str) -> &str {
        image_ref
            .strip_prefix("syn/")
            .and_then(|r| r.split_once('/'))
            .map_or(image_ref, |(_, src)| src)
    }

    fn expand(caption: &str) -> String {
        let turns = vec![
            Turn::human("<image>\nDescribe the image."),
            Turn::assistant(caption.trim()),
        ];
        serde_json::to_string(&turns).expect("turns serialize")
    }

    fn rewrite(&self, prompt: &str) -> Option<String> {
        let subs_start = prompt.find(SUBSTITUTIONS_MARKER)? + SUBSTITUTIONS_MARKER.len();
        let conv_start = prompt.find(CONVERSATION_MARKER)?;
        let subs: Vec<(String, String)> = prompt[subs_start..conv_start]
            .lines()
            .filter_map(|l| l.split_once("=>"))
            .map(|(a, b)| (a.trim().to_owned(), b.trim().to_owned()))
            .collect();
        let mut turns: Vec<Turn> =
            serde_json::from_str(prompt[conv_start + CONVERSATION_MARKER.len()..].trim()).ok()?;
        if !self.broken_rewriter {
            for t in &mut turns {
                for (from, to) in &subs {
                    t.text = replace_word(&t.text, from, to);
                }
            }
        }
        serde_json::to_string(&turns).ok()
    }
}

impl SynthesisBackend for MockSynthesisBackend {
    fn image_gen(&self, image_ref: &str, prompt: &str) -> Result<String> {
        Ok(format!("syn/{:016x}/{}", hash64(0, image_ref, prompt), image_ref))
    }

    fn caption(&self, image_ref: &str) -> Result<String> {
        let objs = self
            .objects_by_image
            .get(Self::source_of(image_ref))
            .filter(|o| !o.is_empty());
        Ok(match objs {
            Some(o) => format!("An image showing {}.", o.join(" and ")),
            None => "An image.".to_owned(),
        })
    }

    fn chat(&self, prompt: &str) -> Result<String> {
        if let Some(out) = self.rewrite(prompt) {
            return Ok(out);
        }
        let caption = prompt
            .find(CAPTION_MARKER)
            .map(|i| prompt[i + CAPTION_MARKER.len()..].lines().next().unwrap_or(""))
            .unwrap_or(prompt);
        Ok(Self::expand(caption))
    }
}

/// Replaces whole-word, case-insensitive occurrences of `from` (and its
/// `s` plural) with `to`.
pub fn replace_word(text: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        let lower = word.to_lowercase();
        if lower == from {
            out.push_str(to);
        } else if lower.strip_suffix('s') == Some(from) {
            out.push_str(to);
            out.push('s');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}
