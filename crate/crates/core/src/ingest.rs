//! Natural-hierarchy CSV loading.
//!
//! Input is a three-column file `node_id,parent_id,quality`. The root has an
//! empty `parent_id`; leaves carry a raw quality (an income ratio, a test
//! score, a mean return, ...) and selectors leave it empty. Raw qualities are
//! mapped into `[0, 1]` before they become leaf success probabilities.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IngestError, Result};
use crate::hierarchy::{build_tree, NodeSpec, TreeSpec};

pub const HEADER: [&str; 3] = ["node_id", "parent_id", "quality"];

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyRow {
    pub node_id: String,
    pub parent_id: Option<String>,
    pub quality_raw: Option<f64>,
    /// 1-based line in the source file.
    pub line: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMethod {
    /// Midpoint ranks `(r - 0.5) / L`, ties averaged.
    #[default]
    RankUniform,
    MinMax,
    /// Raw values must already lie in `[0, 1]`.
    Identity,
}

impl FromStr for NormalizationMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rank" | "rank-uniform" => Ok(Self::RankUniform),
            "minmax" | "min-max" => Ok(Self::MinMax),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown normalisation `{other}` (rank, minmax, identity)")),
        }
    }
}

pub fn load_hierarchy_csv(path: impl AsRef<Path>) -> Result<Vec<HierarchyRow>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    parse_hierarchy_csv(file)
}

pub fn parse_hierarchy_csv(input: impl Read) -> Result<Vec<HierarchyRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Header(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(IngestError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut root_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].to_owned();
        if id.is_empty() {
            return Err(IngestError::Malformed { line, message: "empty node_id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { line, id });
        }
        let parent = (!record[1].is_empty()).then(|| record[1].to_owned());
        if parent.is_none() {
            if root_seen {
                return Err(IngestError::MultipleRoots { line, id });
            }
            root_seen = true;
        }
        let quality = match &record[2] {
            "" => None,
            raw => match raw.parse::<f64>() {
                Ok(q) if q.is_finite() => Some(q),
                _ => return Err(IngestError::BadQuality { line, value: raw.to_owned() }),
            },
        };
        rows.push(HierarchyRow { node_id: id, parent_id: parent, quality_raw: quality, line });
    }
    if !root_seen {
        return Err(IngestError::NoRoot);
    }

    let parents: HashSet<&str> = rows.iter().filter_map(|r| r.parent_id.as_deref()).collect();
    for row in &rows {
        let has_children = parents.contains(row.node_id.as_str());
        match (has_children, row.quality_raw) {
            (true, Some(_)) => {
                return Err(IngestError::SelectorWithQuality { line: row.line, id: row.node_id.clone() })
            }
            (false, None) => {
                return Err(IngestError::LeafWithoutQuality { line: row.line, id: row.node_id.clone() })
            }
            _ => {}
        }
    }
    Ok(rows)
}

/// Maps each value to `(r - 0.5) / L`, where `r` is its 1-based ascending
/// rank among the `L` values and tied values share their average rank.
pub fn rank_normalize(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && raw[order[end]] == raw[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = (rank - 0.5) / n as f64;
        }
        start = end;
    }
    out
}

/// `(x - min) / (max - min)`; a constant input maps to 0.5.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; raw.len()]
    }
}

/// Normalises leaf qualities and produces a validated tree spec, one node
/// per row in file order.
pub fn to_tree_spec(rows: &[HierarchyRow], method: NormalizationMethod) -> Result<TreeSpec> {
    let raw: Vec<f64> = rows.iter().filter_map(|r| r.quality_raw).collect();
    let normalized = match method {
        NormalizationMethod::RankUniform => rank_normalize(&raw),
        NormalizationMethod::MinMax => min_max_normalize(&raw),
        NormalizationMethod::Identity => raw.clone(),
    };
    let mut leaf_quality: HashMap<&str, f64> = HashMap::new();
    let mut next = normalized.into_iter();
    for row in rows.iter().filter(|r| r.quality_raw.is_some()) {
        let q = next.next().expect("one normalised value per leaf");
        if !(0.0..=1.0).contains(&q) {
            return Err(IngestError::Range { id: row.node_id.clone(), value: q }.into());
        }
        leaf_quality.insert(&row.node_id, q);
    }

    let nodes: Vec<NodeSpec> = rows
        .iter()
        .map(|row| match leaf_quality.get(row.node_id.as_str()) {
            Some(&q) => NodeSpec::leaf(&row.node_id, row.parent_id.as_deref(), q),
            None => NodeSpec::selector(&row.node_id, row.parent_id.as_deref()),
        })
        .collect();
    build_tree::<f64>(&nodes)?;
    Ok(TreeSpec::new(nodes))
}
