//! Result tables.
//!
//! CSV files open with two `#` comment lines, `# format_version=1` and
//! `# config=<resolved config JSON>`, followed by the fixed header
//! [`CSV_HEADER`] and one row per seed per grid cell. Empty cells mean "not
//! measured"; an empty settling cell next to a measured accuracy means the
//! root never settled.

use std::io::Write;

use serde::Serialize;
use serde_json::json;

use super::experiment::{ComparisonCell, ExperimentConfig, ExperimentResult, SweepTable};
use crate::error::Result;

pub const FORMAT_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 14] = [
    "cell",
    "seed",
    "leaves",
    "depth",
    "rounds",
    "delta_accuracy",
    "explicit_accuracy",
    "ratio",
    "mismatches",
    "observations",
    "delta_root_settling",
    "explicit_root_settling",
    "delta_root_max_weight",
    "explicit_root_max_weight",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub cell: String,
    pub seed: u64,
    pub leaves: usize,
    pub depth: usize,
    pub rounds: u64,
    pub delta_accuracy: Option<f64>,
    pub explicit_accuracy: Option<f64>,
    pub ratio: Option<f64>,
    pub mismatches: Option<u64>,
    pub observations: Option<u64>,
    pub delta_root_settling: Option<u64>,
    pub explicit_root_settling: Option<u64>,
    pub delta_root_max_weight: Option<f64>,
    pub explicit_root_max_weight: Option<f64>,
}

/// One row per seed of `result`, labelled `cell`.
pub fn csv_rows(cell: &str, result: &ExperimentResult) -> Vec<CsvRow> {
    result
        .runs
        .iter()
        .map(|run| {
            let d = run.delta.as_ref();
            let e = run.explicit.as_ref();
            let audit = d.and_then(|m| m.audit.as_ref());
            CsvRow {
                cell: cell.to_owned(),
                seed: run.seed,
                leaves: run.leaves,
                depth: run.depth,
                rounds: result.config.rounds,
                delta_accuracy: d.and_then(|m| m.accuracy),
                explicit_accuracy: e.and_then(|m| m.accuracy),
                ratio: run.ratio(),
                mismatches: audit.map(|a| a.mismatches),
                observations: audit.map(|a| a.observations),
                delta_root_settling: d.and_then(|m| m.root_settling()),
                explicit_root_settling: e.and_then(|m| m.root_settling()),
                delta_root_max_weight: d.and_then(|m| m.root_mean_max_weight()),
                explicit_root_max_weight: e.and_then(|m| m.root_mean_max_weight()),
            }
        })
        .collect()
}

pub fn experiment_rows(result: &ExperimentResult) -> Vec<CsvRow> {
    csv_rows("run", result)
}

pub fn comparison_rows(cells: &[ComparisonCell]) -> Vec<CsvRow> {
    cells.iter().flat_map(|c| csv_rows(&format!("b={};D={}", c.branching, c.depth), &c.result)).collect()
}

pub fn sweep_rows(table: &SweepTable) -> Vec<CsvRow> {
    table.rows.iter().flat_map(|r| csv_rows(&format!("eta={};D={}", r.rate, r.depth), &r.result)).collect()
}

/// Writes the preamble, header and rows.
pub fn write_csv(out: &mut impl Write, config: &ExperimentConfig, rows: &[CsvRow]) -> Result<()> {
    writeln!(out, "# format_version={FORMAT_VERSION}")?;
    writeln!(out, "# config={}", config.to_json()?)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(CSV_HEADER).map_err(csv_error)?;
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Renders the CSV to a string.
pub fn csv_string(config: &ExperimentConfig, rows: &[CsvRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, config, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

fn csv_error(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

/// Versioned JSON summary: the resolved config, the seed list and the
/// aggregate of each labelled cell.
pub fn summary_json<'a>(
    config: &ExperimentConfig,
    cells: impl IntoIterator<Item = (String, &'a ExperimentResult)>,
) -> serde_json::Value {
    let cells: Vec<_> = cells
        .into_iter()
        .map(|(label, r)| json!({ "cell": label, "aggregate": r.aggregate }))
        .collect();
    json!({
        "format_version": FORMAT_VERSION,
        "config": config,
        "seeds": config.seeds,
        "cells": cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::{run_experiment, ModeSelection, TreeSource};

    #[test]
    fn csv_layout() {
        let mut c = ExperimentConfig::new(TreeSource::Flat { qualities: vec![0.9, 0.6], contexts: 1 }, 200, vec![3, 4]);
        c.mode = ModeSelection::Both;
        let r = run_experiment(&c).unwrap();
        let text = csv_string(&c, &experiment_rows(&r)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# format_version=1");
        assert!(lines[1].starts_with("# config={"));
        assert_eq!(lines[2], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("run,3,2,1,200,"));
        let embedded: ExperimentConfig = serde_json::from_str(&lines[1]["# config=".len()..]).unwrap();
        assert_eq!(embedded, c);

        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
        assert_eq!(reader.records().count(), 2);
    }

    #[test]
    fn summary_is_versioned() {
        let c = ExperimentConfig::new(TreeSource::Flat { qualities: vec![0.9, 0.6], contexts: 1 }, 50, vec![1]);
        let r = run_experiment(&c).unwrap();
        let v = summary_json(&c, [("run".to_string(), &r)]);
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["seeds"], json!([1]));
        assert_eq!(v["cells"][0]["aggregate"]["mismatches"], 0);
    }
}
