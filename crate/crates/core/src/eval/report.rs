use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::invariance::InvarianceTable;
use super::retrieval::{Relevance, RetrievalResult};
use crate::error::{MopError, Result};

/// One row of an accuracy table, labelled like `vlad, concatenation,
/// level1+level2+level3`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub method: String,
    pub strategy: String,
    pub levels: String,
    pub dim: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalRow {
    pub method: String,
    pub strategy: String,
    pub levels: String,
    pub dim: usize,
    pub map: f64,
}

fn write_rows<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_accuracy_csv<W: Write>(w: W, rows: &[AccuracyRow]) -> Result<()> {
    write_rows(w, rows)
}

pub fn write_retrieval_csv<W: Write>(w: W, rows: &[RetrievalRow]) -> Result<()> {
    write_rows(w, rows)
}

/// `kind,parameter,accuracy`, one row per sweep cell.
pub fn write_invariance_csv<W: Write>(w: W, table: &InvarianceTable) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        kind: &'a str,
        parameter: f64,
        accuracy: f64,
    }
    let rows: Vec<Row> = table
        .rows
        .iter()
        .map(|r| Row { kind: r.kind.name(), parameter: r.parameter, accuracy: r.accuracy })
        .collect();
    write_rows(w, &rows)
}

/// `query_id,average_precision`, one row per query.
pub fn write_query_ap_csv<W: Write>(w: W, result: &RetrievalResult) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        query_id: &'a str,
        average_precision: f64,
    }
    let rows: Vec<Row> = result
        .queries
        .iter()
        .map(|q| Row { query_id: &q.query_id, average_precision: q.average_precision })
        .collect();
    write_rows(w, &rows)
}

/// Labels file: a JSON object mapping image id to class name.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read(path, "labels")?;
    Ok(serde_json::from_str(&text)?)
}

/// Relevance file: a JSON object mapping query id to a list of relevant ids.
pub fn load_relevance(path: &Path) -> Result<Relevance> {
    let text = read(path, "relevance")?;
    Ok(serde_json::from_str(&text)?)
}

fn read(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| MopError::NotFound(format!("cannot read {what} file {}: {e}", path.display())))
}
