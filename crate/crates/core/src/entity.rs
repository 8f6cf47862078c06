//! Perspectives and canonical entity keys.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One of the four views an instance is analyzed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Perspective {
    #[serde(rename = "tok")]
    Token,
    #[serde(rename = "obj")]
    Object,
    #[serde(rename = "co")]
    CoOccurrence,
    #[serde(rename = "int")]
    Interrogation,
}

impl Perspective {
    pub const ALL: [Perspective; 4] = [
        Perspective::Token,
        Perspective::Object,
        Perspective::CoOccurrence,
        Perspective::Interrogation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Token => "tok",
            Perspective::Object => "obj",
            Perspective::CoOccurrence => "co",
            Perspective::Interrogation => "int",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Parses a comma separated list such as `tok,obj`.
    pub fn parse_list(s: &str) -> Result<Vec<Perspective>, Error> {
        let mut out: Vec<Perspective> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let p: Perspective = part.parse()?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        if out.is_empty() {
            return Err(Error::usage("empty perspective list"));
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perspective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tok" | "token" => Ok(Perspective::Token),
            "obj" | "object" => Ok(Perspective::Object),
            "co" | "cooccurrence" | "co-occurrence" => Ok(Perspective::CoOccurrence),
            "int" | "interrogation" => Ok(Perspective::Interrogation),
            other => Err(Error::usage(format!("unknown perspective `{other}`"))),
        }
    }
}

/// Lowercases and collapses whitespace. `|` is reserved
/// for co-occurrence pairs and is replaced by a space.
pub fn canonicalize(s: &str) -> String {
    let lowered = s.to_lowercase().replace('|', " ");
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// A canonical entity string. Co-occurrence keys are rendered `a|b` with
/// `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityKey(String);

impl EntityKey {
    /// Canonical atomic key; `None` when the input is blank.
    pub fn new(raw: &str) -> Option<Self> {
        let c = canonicalize(raw);
        (!c.is_empty()).then_some(EntityKey(c))
    }

    /// Unordered pair key; `None` when the members are equal or blank.
    pub fn pair(a: &str, b: &str) -> Option<Self> {
        let a = canonicalize(a);
        let b = canonicalize(b);
        if a.is_empty() || b.is_empty() || a == b {
            return None;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Some(EntityKey(format!("{lo}|{hi}")))
    }

    /// Parses a serialized key for the given perspective.
    pub fn parse(perspective: Perspective, raw: &str) -> Result<Self, Error> {
        let key = match perspective {
            Perspective::CoOccurrence => {
                let (a, b) = raw
                    .split_once('|')
                    .ok_or_else(|| Error::data(format!("co-occurrence key `{raw}` is not a pair")))?;
                EntityKey::pair(a, b)
            }
            _ => EntityKey::new(raw),
        };
        key.ok_or_else(|| Error::data(format!("invalid {perspective} entity `{raw}`")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Members of a pair key.
    pub fn members(&self) -> Option<(&str, &str)> {
        self.0.split_once('|')
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for EntityKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub type EntitySet = BTreeSet<EntityKey>;
pub type Entities = BTreeMap<Perspective, EntitySet>;
