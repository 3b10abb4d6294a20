//! Tree spec file: `{ "nodes": [ { "id", "parent", "kind", "quality", "context_count" } ] }`.
//!
//! Children are ordered by their appearance in `nodes`; that order fixes the
//! child indices used by routing and weight vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Selector,
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_count: Option<usize>,
}

impl NodeSpec {
    pub fn selector(id: impl Into<String>, parent: Option<&str>) -> Self {
        Self {
            id: id.into(),
            parent: parent.map(str::to_owned),
            kind: NodeKind::Selector,
            quality: None,
            context_count: None,
        }
    }

    pub fn leaf(id: impl Into<String>, parent: Option<&str>, quality: f64) -> Self {
        Self {
            id: id.into(),
            parent: parent.map(str::to_owned),
            kind: NodeKind::Leaf,
            quality: Some(quality),
            context_count: None,
        }
    }

    pub fn with_contexts(mut self, count: usize) -> Self {
        self.context_count = Some(count);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub nodes: Vec<NodeSpec>,
}

impl TreeSpec {
    pub fn new(nodes: Vec<NodeSpec>) -> Self {
        Self { nodes }
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Sets `context_count` on every selector.
    pub fn with_selector_contexts(mut self, count: usize) -> Self {
        for node in &mut self.nodes {
            if node.kind == NodeKind::Selector {
                node.context_count = Some(count);
            }
        }
        self
    }
}
