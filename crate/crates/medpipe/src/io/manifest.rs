//! Subject manifest: CSV with a `SubjectID` column, `Channel_0` ..
//! `Channel_{N-1}` image paths and an optional `Label` column (mask path for
//! segmentation, number otherwise).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use medpipe_core::models::Task;

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Mask(PathBuf),
    Value(f64),
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub channel_paths: Vec<PathBuf>,
    pub target: Target,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Read and validate a manifest. With `require_label`, every row must carry
/// a target. Referenced files must exist.
pub fn read_manifest(path: &Path, task: Task, require_label: bool) -> Result<Vec<SubjectRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header.first().map(String::as_str) != Some("SubjectID") {
        return Err(parse_err(path, 1, "first column must be SubjectID"));
    }
    let has_label = header.last().map(String::as_str) == Some("Label");
    let n_channels = header.len() - 1 - usize::from(has_label);
    if n_channels == 0 {
        return Err(parse_err(path, 1, "no Channel_0 column"));
    }
    for (k, name) in header[1..1 + n_channels].iter().enumerate() {
        if *name != format!("Channel_{k}") {
            return Err(parse_err(path, 1, format!("column {} should be Channel_{k}, found {name:?}", k + 1)));
        }
    }
    if require_label && !has_label {
        return Err(parse_err(path, 1, "a Label column is required"));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("row has {} fields but the header declares {} (SubjectID, {n_channels} channel(s){})",
                    row.len(), header.len(), if has_label { ", Label" } else { "" }),
            ));
        }
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty SubjectID"));
        }
        let channel_paths: Vec<PathBuf> = row.iter().skip(1).take(n_channels).map(PathBuf::from).collect();
        if let Some(k) = channel_paths.iter().position(|p| p.as_os_str().is_empty()) {
            return Err(parse_err(path, line, format!("Channel_{k} is empty")));
        }
        let label = if has_label { row[header.len() - 1].to_string() } else { String::new() };
        let target = if label.is_empty() {
            if require_label {
                return Err(parse_err(path, line, "Label is empty"));
            }
            Target::None
        } else if task == Task::Segmentation {
            Target::Mask(PathBuf::from(label))
        } else {
            Target::Value(
                label.parse().map_err(|_| parse_err(path, line, format!("Label {label:?} is not a number")))?,
            )
        };
        records.push(SubjectRecord { subject_id: id, channel_paths, target });
    }
    if records.is_empty() {
        return Err(PipelineError::Validation(format!("{}: manifest has no subjects", path.display())));
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *seen.entry(&r.subject_id).or_default() += 1;
    }
    let dups: Vec<&str> = seen.iter().filter(|(_, &n)| n > 1).map(|(id, _)| *id).collect();
    if !dups.is_empty() {
        return Err(PipelineError::Validation(format!("duplicate SubjectID values: {}", dups.join(", "))));
    }
    let mut missing = Vec::new();
    for r in &records {
        let mask = match &r.target {
            Target::Mask(p) => Some(p),
            _ => None,
        };
        for p in r.channel_paths.iter().chain(mask) {
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::Validation(format!("missing files: {}", missing.join(", "))));
    }
    Ok(records)
}

fn csv_err(path: &Path, e: csv::Error) -> PipelineError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PipelineError::io(path, io),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Write a manifest in the canonical column layout.
pub fn write_manifest(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    let n = records.first().map_or(1, |r| r.channel_paths.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["SubjectID".to_string()];
    header.extend((0..n).map(|k| format!("Channel_{k}")));
    header.push("Label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.subject_id.clone()];
        row.extend(r.channel_paths.iter().map(|p| p.display().to_string()));
        row.push(match &r.target {
            Target::Mask(p) => p.display().to_string(),
            Target::Value(v) => v.to_string(),
            Target::None => String::new(),
        });
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}
