//! File formats shared by the pipeline stages: atomic writes, content
//! hashes, CSV tables and run manifests.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rater::ScoreRecord;

pub const SCORES_HEADER: [&str; 3] = ["sample_id", "raw_score", "percentile"];
pub const TRACES_HEADER: [&str; 4] = ["sample_id", "epoch", "loss", "grad_norm"];
pub const BINS_HEADER: [&str; 6] = ["bin_lo", "bin_hi", "epoch", "mean_loss", "mean_grad_norm", "count"];
pub const COMPARISON_HEADER: [&str; 4] = ["strategy", "seed", "epoch", "val_loss"];
pub const CURVE_HEADER: [&str; 2] = ["epoch", "val_loss"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Git-style object hash (`blob <len>\0<content>`) using SHA-256, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(content_hash(&bytes))
}

pub(crate) fn csv_to_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn scores_to_csv(scores: &[ScoreRecord]) -> Result<String> {
    csv_to_string(
        &SCORES_HEADER,
        scores
            .iter()
            .map(|s| vec![s.sample_id.clone(), fmt_real(s.raw_score), fmt_real(s.percentile)]),
    )
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let text = read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let got = rdr.headers()?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        rows.push((i + 2, rec));
    }
    Ok(rows)
}

fn parse_f64(path: &Path, line: usize, field: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("{field}: {e}"),
    })
}

/// Reads a scores CSV; rows must be sorted by percentile.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let rows = read_csv(path, &SCORES_HEADER)?;
    rows.into_iter()
        .map(|(line, r)| {
            Ok(ScoreRecord {
                sample_id: r[0].to_string(),
                raw_score: parse_f64(path, line, "raw_score", &r[1])?,
                percentile: parse_f64(path, line, "percentile", &r[2])?,
            })
        })
        .collect()
}

pub fn traces_to_csv(traces: &[crate::meta_loop::TraceRow]) -> Result<String> {
    csv_to_string(
        &TRACES_HEADER,
        traces.iter().map(|t| {
            vec![
                t.sample_id.clone(),
                t.epoch.to_string(),
                fmt_real(t.loss),
                fmt_real(t.grad_norm),
            ]
        }),
    )
}

/// Validation loss per epoch, 1-based.
pub fn curve_to_csv(curve: &[f64]) -> Result<String> {
    csv_to_string(
        &CURVE_HEADER,
        curve
            .iter()
            .enumerate()
            .map(|(e, v)| vec![(e + 1).to_string(), fmt_real(*v)]),
    )
}

/// One sample id per line.
pub fn ids_to_string(ids: &[String]) -> String {
    let mut s = String::new();
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    s
}

pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn traces_from_csv(path: impl AsRef<Path>) -> Result<Vec<crate::meta_loop::TraceRow>> {
    let path = path.as_ref();
    read_csv(path, &TRACES_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(crate::meta_loop::TraceRow {
                sample_id: r[0].to_string(),
                epoch: r[1].trim().parse().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("epoch: {e}"),
                })?,
                loss: parse_f64(path, line, "loss", &r[2])?,
                grad_norm: parse_f64(path, line, "grad_norm", &r[3])?,
            })
        })
        .collect()
}

/// Input or output file recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub hash: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            hash: file_hash(path)?,
        })
    }
}

/// Sidecar describing how an output was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub stats: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: "metaprune".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stats: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}
