//! Synthetic corpora whose entity frequencies follow a Zipf law.
//!
//! Every instance mentions a handful of invented nouns drawn from
//! `P(rank r) ∝ r^-s`, shows them as objects, and asks one question whose
//! form is drawn from the same law over a fixed set of templates. The nouns,
//! a synonym table and an evaluation log are emitted alongside so the whole
//! pipeline can run on the output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_corpus, write_eval_log, CorpusFormat, DataInstance, EvalCase, Turn};
use crate::entity::{Entities, EntityKey, EntitySet, Perspective};
use crate::error::{Error, Result};
use crate::extraction::build_cooccurrence_entities;
use crate::rng;

const QUESTIONS: [(&str, &str); 12] = [
    ("how many", "How many {x} can you see?"),
    ("what color", "What color is the {x}?"),
    ("is there", "Is there a {x} in the picture?"),
    ("where", "Where is the {x}?"),
    ("what kind of", "What kind of {x} is shown?"),
    ("are there", "Are there any {x} here?"),
    ("why", "Why is the {x} here?"),
    ("which one", "Which one is the {x}?"),
    ("how old", "How old is the {x}?"),
    ("can", "Can you describe the {x}?"),
    ("does", "Does the {x} look new?"),
    ("who", "Who is near the {x}?"),
];

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfConfig {
    /// Zipf exponent.
    pub s: f64,
    pub entities: usize,
    pub instances: usize,
    pub seed: u64,
    /// Inclusive range of noun draws per instance (draws may repeat).
    pub min_per_instance: usize,
    pub max_per_instance: usize,
    /// Size of the accompanying evaluation log.
    pub eval_cases: usize,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        ZipfConfig {
            s: 1.2,
            entities: 1000,
            instances: 1000,
            seed: 7,
            min_per_instance: 1,
            max_per_instance: 3,
            eval_cases: 200,
        }
    }
}

/// Invented noun for a 1-based rank: three consonant-vowel syllables.
pub fn noun_for_rank(rank: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let mut i = rank - 1;
    let mut out = String::with_capacity(6);
    for _ in 0..3 {
        let syl = i % syllables;
        i /= syllables;
        out.push(CONSONANTS[syl / VOWELS.len()] as char);
        out.push(VOWELS[syl % VOWELS.len()] as char);
    }
    out
}

/// Normalized Zipf probabilities for ranks `1..=n`.
pub fn zipf_masses(s: f64, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let h: f64 = w.iter().sum();
    w.into_iter().map(|x| x / h).collect()
}

impl ZipfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::usage("zipf exponent must be positive"));
        }
        if self.entities < 2 || self.entities > CONSONANTS.len().pow(3) * VOWELS.len().pow(3) {
            return Err(Error::usage("entity count out of range"));
        }
        if self.instances == 0 {
            return Err(Error::usage("instance count must be positive"));
        }
        if self.min_per_instance == 0 || self.min_per_instance > self.max_per_instance {
            return Err(Error::usage("per-instance range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }

    /// Probability that one draw yields rank `rank` (1-based).
    pub fn mass(&self, rank: usize) -> f64 {
        zipf_masses(self.s, self.entities)[rank - 1]
    }

    /// Expected share of all (instance, entity) pairs that carry `rank`,
    /// accounting for repeated draws collapsing within an instance. With one
    /// draw per instance this is exactly [`ZipfConfig::mass`].
    pub fn expected_share(&self, rank: usize) -> f64 {
        let masses = zipf_masses(self.s, self.entities);
        let ks = self.min_per_instance..=self.max_per_instance;
        let present = |p: f64| ks.clone().map(|k| 1.0 - (1.0 - p).powi(k as i32)).sum::<f64>();
        present(masses[rank - 1]) / masses.iter().map(|&p| present(p)).sum::<f64>()
    }

    /// Lazily generated corpus; equal to [`ZipfConfig::generate`]'s.
    pub fn instances(&self) -> Result<ZipfInstances> {
        self.validate()?;
        Ok(ZipfInstances {
            sampler: Sampler::new(self),
            rng: rng::stream(self.seed, "zipf", "corpus"),
            next: 0,
            total: self.instances,
        })
    }

    pub fn generate(&self) -> Result<ZipfFixture> {
        let corpus: Vec<DataInstance> = self.instances()?.collect();
        let sampler = Sampler::new(self);
        let mut rng = rng::stream(self.seed, "zipf", "eval");
        let eval = (0..self.eval_cases)
            .map(|i| {
                let (ranks, q) = sampler.draw(&mut rng);
                let words = sampler.words(&ranks);
                let (form, template) = QUESTIONS[q];
                let rarity = *ranks.last().expect("at least one draw") as f64 / self.entities as f64;
                let correct = rng.gen::<f64>() >= 0.1 + 0.8 * rarity.sqrt();
                let gold = words[0].to_string();
                EvalCase {
                    case_id: format!("q{i:05}"),
                    question: template.replace("{x}", &words.join(" and ")),
                    predicted: if correct { gold.clone() } else { "unknown".into() },
                    gold,
                    correct,
                    image_ref: Some(format!("img/q{i:05}.jpg")),
                    entities: entities_for(&words, form),
                }
            })
            .collect();

        let nouns = sampler.nouns;
        // Each of the 50 most frequent nouns gets two rare synonyms.
        let synonyms = (1..=self.entities.min(50))
            .map(|r| {
                let a = self.entities + 1 - r;
                let b = self.entities / 2 + r;
                let mut syn = vec![nouns[a - 1].clone()];
                if b != a && b != r && b <= self.entities {
                    syn.push(nouns[b - 1].clone());
                }
                (nouns[r - 1].clone(), syn)
            })
            .collect();

        Ok(ZipfFixture {
            config: self.clone(),
            corpus,
            eval,
            nouns,
            synonyms,
        })
    }
}

struct Sampler {
    nouns: Vec<String>,
    draw: WeightedIndex<f64>,
    ask: WeightedIndex<f64>,
    per_instance: std::ops::RangeInclusive<usize>,
}

impl Sampler {
    fn new(cfg: &ZipfConfig) -> Self {
        Sampler {
            nouns: (1..=cfg.entities).map(noun_for_rank).collect(),
            draw: WeightedIndex::new(zipf_masses(cfg.s, cfg.entities)).expect("finite weights"),
            ask: WeightedIndex::new(zipf_masses(cfg.s, QUESTIONS.len())).expect("finite weights"),
            per_instance: cfg.min_per_instance..=cfg.max_per_instance,
        }
    }

    /// Distinct noun ranks (ascending) and a question index.
    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
        let k = rng.gen_range(self.per_instance.clone());
        let mut ranks: Vec<usize> = (0..k).map(|_| self.draw.sample(rng) + 1).collect();
        ranks.sort_unstable();
        ranks.dedup();
        (ranks, self.ask.sample(rng))
    }

    fn words(&self, ranks: &[usize]) -> Vec<&str> {
        ranks.iter().map(|&r| self.nouns[r - 1].as_str()).collect()
    }
}

/// Iterator over a Zipf corpus, one instance at a time.
pub struct ZipfInstances {
    sampler: Sampler,
    rng: ChaCha8Rng,
    next: usize,
    total: usize,
}

impl Iterator for ZipfInstances {
    type Item = DataInstance;

    fn next(&mut self) -> Option<DataInstance> {
        if self.next == self.total {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let (ranks, q) = self.sampler.draw(&mut self.rng);
        let words = self.sampler.words(&ranks);
        let (form, template) = QUESTIONS[q];
        let mut inst = DataInstance::new(
            format!("z{i:06}"),
            Some(format!("img/z{i:06}.jpg")),
            vec![
                Turn::human(format!("<image>\n{}", template.replace("{x}", &words.join(" and ")))),
                Turn::assistant(format!("It shows {}.", words.join(" and "))),
            ],
        );
        inst.entities = entities_for(&words, form);
        Some(inst)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

fn entities_for(words: &[&str], form: &str) -> Entities {
    let objects: EntitySet = words.iter().filter_map(|w| EntityKey::new(w)).collect();
    let mut e = Entities::new();
    e.insert(Perspective::Token, objects.clone());
    e.insert(Perspective::CoOccurrence, build_cooccurrence_entities(&objects));
    e.insert(Perspective::Object, objects);
    e.insert(Perspective::Interrogation, EntityKey::new(form).into_iter().collect());
    e
}

#[derive(Debug, Clone)]
pub struct ZipfFixture {
    pub config: ZipfConfig,
    pub corpus: Vec<DataInstance>,
    pub eval: Vec<EvalCase>,
    /// Nouns in rank order.
    pub nouns: Vec<String>,
    pub synonyms: Vec<(String, Vec<String>)>,
}

/// Paths written by [`ZipfFixture::write`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureFiles {
    pub corpus: PathBuf,
    pub eval: PathBuf,
    pub lexicon: PathBuf,
    pub synonyms: PathBuf,
}

impl ZipfFixture {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<FixtureFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = FixtureFiles {
            corpus: dir.join("corpus.jsonl"),
            eval: dir.join("eval.jsonl"),
            lexicon: dir.join("nouns.txt"),
            synonyms: dir.join("synonyms.txt"),
        };
        write_corpus(&self.corpus, &files.corpus, CorpusFormat::LlavaJsonl)?;
        write_eval_log(&self.eval, &files.eval)?;
        let mut nouns = self.nouns.join("\n");
        nouns.push('\n');
        fs::write(&files.lexicon, nouns).map_err(|e| Error::io(&files.lexicon, e))?;
        let syn: String = self
            .synonyms
            .iter()
            .map(|(h, s)| format!("{h}: {}\n", s.join(", ")))
            .collect();
        fs::write(&files.synonyms, syn).map_err(|e| Error::io(&files.synonyms, e))?;
        Ok(files)
    }
}
