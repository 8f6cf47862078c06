use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ReverseIndex;
use crate::entity::Perspective;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub weight: u64,
}

/// Undirected object graph; edge weight is the number of instances the pair
/// appears in.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoOccurrenceGraph {
    pub degrees: BTreeMap<String, usize>,
    pub edges: Vec<GraphEdge>,
}

impl CoOccurrenceGraph {
    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    /// `a\tb\tweight` lines, edges in key order.
    pub fn to_edge_list(&self) -> String {
        self.edges
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.source, e.target, e.weight))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "nodes": self.degrees.iter().map(|(id, d)| json!({"id": id, "degree": d})).collect::<Vec<_>>(),
            "edges": self.edges,
        })
    }

    pub fn write(&self, edge_list: &Path, json_path: &Path) -> Result<()> {
        std::fs::File::create(edge_list)
            .and_then(|mut f| f.write_all(self.to_edge_list().as_bytes()))
            .map_err(|e| Error::io(edge_list, e))?;
        let body = serde_json::to_string_pretty(&self.to_json()).expect("graph json");
        std::fs::write(json_path, body).map_err(|e| Error::io(json_path, e))
    }
}

pub fn export_cooccurrence_graph(index: &ReverseIndex) -> Result<CoOccurrenceGraph> {
    if index.perspective() != Perspective::CoOccurrence {
        return Err(Error::data("graph export needs the co-occurrence index"));
    }
    let mut g = CoOccurrenceGraph::default();
    for (key, ids) in &index.postings {
        let (a, b) = key
            .members()
            .ok_or_else(|| Error::data(format!("`{key}` is not a pair key")))?;
        *g.degrees.entry(a.to_owned()).or_default() += 1;
        *g.degrees.entry(b.to_owned()).or_default() += 1;
        g.edges.push(GraphEdge {
            source: a.to_owned(),
            target: b.to_owned(),
            weight: ids.len() as u64,
        });
    }
    Ok(g)
}
