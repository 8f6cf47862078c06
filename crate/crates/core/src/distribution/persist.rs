use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use super::{EntityDistribution, ReverseIndex};
use crate::entity::{EntityKey, Perspective};
use crate::error::{Error, Result};

/// One line of a persisted index: `{"e": .., "n": .., "ids": [..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub e: String,
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
}

/// Writes the index in rank order (count descending, key ascending).
pub fn write_index(index: &ReverseIndex, path: &Path, with_ids: bool) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for e in index.distribution().rank_order() {
        let ids = &index.postings[e];
        let rec = IndexRecord {
            e: e.to_string(),
            n: ids.len() as u64,
            ids: with_ids.then(|| ids.iter().cloned().collect()),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_records(path: &Path, perspective: Perspective) -> Result<Vec<(EntityKey, IndexRecord)>> {
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
        let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let key = EntityKey::parse(perspective, &rec.e).map_err(|e| err(e.to_string()))?;
        if rec.n == 0 {
            return Err(err(format!("`{}` has n = 0", rec.e)));
        }
        if let Some(ids) = &rec.ids {
            if ids.len() as u64 != rec.n {
                return Err(err(format!("`{}`: n does not match ids", rec.e)));
            }
        }
        out.push((key, rec));
    }
    Ok(out)
}

/// Reads an index written with ids by [`write_index`].
pub fn read_index(path: &Path, perspective: Perspective, corpus_size: usize) -> Result<ReverseIndex> {
    let mut idx = ReverseIndex::new(perspective);
    idx.corpus_size = corpus_size;
    for (key, rec) in read_records(path, perspective)? {
        let ids = rec
            .ids
            .ok_or_else(|| Error::data(format!("{}: `{}` has no ids", path.display(), rec.e)))?;
        idx.postings.insert(key, ids.into_iter().collect());
    }
    Ok(idx)
}

/// Reads only the counts of a persisted index; ids are optional.
pub fn read_distribution(path: &Path, perspective: Perspective) -> Result<EntityDistribution> {
    let counts: BTreeMap<EntityKey, u64> = read_records(path, perspective)?
        .into_iter()
        .map(|(k, r)| (k, r.n))
        .collect();
    Ok(EntityDistribution::from_counts(perspective, counts))
}
