//! On-disk formats: sequence CSVs (`idx,f0,...`), label CSVs
//! (`idx,phase,progress`), and the JSON dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seqcore::{EmbeddingSequence, LabeledSequence};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

pub fn write_sequence_csv(path: &Path, seq: &EmbeddingSequence) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["idx".to_string()];
    header.extend((0..seq.dim()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (r, idx) in seq.indices().iter().enumerate() {
        let mut rec = vec![idx.to_string()];
        rec.extend(seq.frames().row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sequence_csv(path: &Path, source_id: &str) -> Result<EmbeddingSequence> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = headers.len().saturating_sub(1);
    let header_ok = headers.get(0) == Some("idx") && headers.iter().skip(1).enumerate().all(|(k, h)| h == format!("f{k}"));
    if dim == 0 || !header_ok {
        return Err(Error::parse(path, "expected header idx,f0,f1,..."));
    }
    let mut indices = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let idx: usize = rec[0].trim().parse().map_err(|e| Error::parse(path, format!("bad idx '{}': {e}", &rec[0])))?;
        indices.push(idx);
        for field in rec.iter().skip(1) {
            data.push(field.trim().parse::<f64>().map_err(|e| Error::parse(path, format!("bad value '{field}': {e}")))?);
        }
    }
    let rows = indices.len();
    let frames = Matrix::from_vec(rows, dim, data).map_err(|e| Error::parse(path, e))?;
    EmbeddingSequence::new(frames, indices, source_id).map_err(|e| Error::parse(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    pub indices: Vec<usize>,
    pub phases: Vec<usize>,
    pub progress: Vec<f64>,
}

pub fn write_labels_csv(path: &Path, seq: &LabeledSequence) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["idx", "phase", "progress"]).map_err(|e| csv_err(path, e))?;
    for (r, idx) in seq.sequence.indices().iter().enumerate() {
        w.write_record([idx.to_string(), seq.phase_labels[r].to_string(), seq.progress[r].to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<FrameLabels> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["idx", "phase", "progress"] {
        return Err(Error::parse(path, "expected header idx,phase,progress"));
    }
    let mut out = FrameLabels {
        indices: Vec::new(),
        phases: Vec::new(),
        progress: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str, v: &str| Error::parse(path, format!("bad {what} '{v}'"));
        out.indices.push(rec[0].trim().parse().map_err(|_| bad("idx", &rec[0]))?);
        out.phases.push(rec[1].trim().parse().map_err(|_| bad("phase", &rec[1]))?);
        out.progress.push(rec[2].trim().parse().map_err(|_| bad("progress", &rec[2]))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub sequence: PathBuf,
    pub labels: Option<PathBuf>,
}

/// A loaded dataset entry; `labeled` is present when the manifest names a
/// label file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub sequence: EmbeddingSequence,
    pub labeled: Option<LabeledSequence>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_json(path)
}

/// Loads every manifest entry; relative paths resolve against the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<DatasetEntry>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let mut out = Vec::new();
    for entry in read_manifest(manifest)? {
        let seq_path = resolve(&entry.sequence);
        let sequence = read_sequence_csv(&seq_path, &entry.id)?;
        let labeled = match &entry.labels {
            None => None,
            Some(lp) => {
                let lp = resolve(lp);
                let labels = read_labels_csv(&lp)?;
                if labels.indices != sequence.indices() {
                    return Err(Error::parse(&lp, format!("label indices do not match sequence '{}'", entry.id)));
                }
                Some(LabeledSequence::new(sequence.clone(), labels.phases, labels.progress).map_err(|e| Error::parse(&lp, e))?)
            }
        };
        out.push(DatasetEntry { sequence, labeled });
    }
    Ok(out)
}

/// Every entry must carry labels.
pub fn load_labeled(manifest: &Path) -> Result<Vec<LabeledSequence>> {
    load_dataset(manifest)?
        .into_iter()
        .map(|e| {
            let id = e.sequence.source_id().to_string();
            e.labeled.ok_or_else(|| Error::parse(manifest, format!("entry '{id}' has no labels")))
        })
        .collect()
}

/// Writes `seqs` as `<id>.csv` / `<id>_labels.csv` into `dir` plus a manifest
/// at `dir/<manifest_name>` with paths relative to `dir`.
pub fn write_dataset(dir: &Path, manifest_name: &str, seqs: &[LabeledSequence]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(seqs.len());
    for s in seqs {
        let id = s.sequence.source_id().to_string();
        let seq_name = PathBuf::from(format!("{id}.csv"));
        let lab_name = PathBuf::from(format!("{id}_labels.csv"));
        write_sequence_csv(&dir.join(&seq_name), &s.sequence)?;
        write_labels_csv(&dir.join(&lab_name), s)?;
        entries.push(ManifestEntry {
            id,
            sequence: seq_name,
            labels: Some(lab_name),
        });
    }
    let path = dir.join(manifest_name);
    write_json(&path, &entries)?;
    Ok(path)
}
