#![allow(dead_code)]

use std::path::Path;

use adr::fixture::{FixtureFiles, ZipfConfig};
use adr::pipeline::Settings;

/// Taus scaled to a thousand-instance Zipf corpus.
pub const FIXTURE_TAUS: &str = "tok=60,obj=60,co=10,int=200";

pub fn fixture_settings(files: &FixtureFiles) -> Settings {
    let mut s = Settings::default();
    s.set("tau", FIXTURE_TAUS).unwrap();
    s.n_p = Some(1);
    s.seed = 42;
    s.lexicon = Some(files.lexicon.clone());
    s.synonyms = Some(files.synonyms.clone());
    s
}

pub fn write_fixture(dir: &Path, cfg: &ZipfConfig) -> (FixtureFiles, Settings) {
    let files = cfg.generate().unwrap().write(dir).unwrap();
    let settings = fixture_settings(&files);
    (files, settings)
}

pub fn thousand() -> ZipfConfig {
    ZipfConfig {
        instances: 1000,
        ..Default::default()
    }
}
