//! Training trace records: JSON-lines persistence and CSV exports.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{trap_score, WeightHistogram};
use crate::error::{Error, Result};

/// One diagnostic record. `loss` is the fixed-evaluation-set loss at the
/// recorded step (so it depends only on the weights and the gate, not on
/// the minibatch draw).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub loss: f64,
    pub lambda: f64,
    pub er_per_layer: Vec<f64>,
    pub hist_per_layer: Vec<WeightHistogram>,
}

/// Write records as UTF-8 JSON lines via a temp file and atomic rename.
pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::InvalidConfig {
            reason: format!("trace serialization: {e}"),
        })?;
        writeln!(tmp, "{line}")?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Read a JSON-lines trace. An empty or undecodable file is malformed.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedFile {
                reason: format!("trace line {}: {e}", n + 1),
            })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::MalformedFile {
            reason: "trace contains no records".to_string(),
        });
    }
    Ok(records)
}

/// Effective-rank export: one row per recorded step, one column per layer.
pub fn to_er_csv(records: &[TraceRecord]) -> String {
    let layers = records.first().map_or(0, |r| r.er_per_layer.len());
    let mut out = String::from("step,lambda");
    for l in 0..layers {
        out.push_str(&format!(",er_layer{l}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{}", r.step, r.lambda));
        for er in &r.er_per_layer {
            out.push_str(&format!(",{er}"));
        }
        out.push('\n');
    }
    out
}

/// Histogram export: one row per (step, layer) with the 64 bin counts.
pub fn to_hist_csv(records: &[TraceRecord]) -> String {
    let bins = records
        .first()
        .and_then(|r| r.hist_per_layer.first())
        .map_or(0, |h| h.counts.len());
    let mut out = String::from("step,layer,lo,hi");
    for b in 0..bins {
        out.push_str(&format!(",bin{b}"));
    }
    out.push('\n');
    for r in records {
        for (layer, h) in r.hist_per_layer.iter().enumerate() {
            out.push_str(&format!("{},{layer},{},{}", r.step, h.lo, h.hi));
            for c in &h.counts {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Trap-score export: one row per (step, layer).
pub fn to_trap_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from("step,layer,mode1,mode2,fraction\n");
    for r in records {
        for (layer, h) in r.hist_per_layer.iter().enumerate() {
            let s = trap_score(h);
            out.push_str(&format!(
                "{},{layer},{},{},{}\n",
                r.step, s.modes[0], s.modes[1], s.fraction
            ));
        }
    }
    out
}
