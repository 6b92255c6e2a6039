//! Split plans on disk.

use std::path::Path;

use medpipe_core::crossval::{make_nested_splits, SplitPlan};

use crate::config::PipelineConfig;
use crate::error::{IoContext, PipelineError, Result};
use crate::io::SubjectRecord;

pub const SPLIT_PLAN: &str = "split_plan.csv";

pub fn plan_for(records: &[SubjectRecord], cfg: &PipelineConfig) -> Result<SplitPlan> {
    let ids: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    Ok(make_nested_splits(
        &ids,
        cfg.nested_training.testing,
        cfg.nested_training.validation,
        cfg.seed,
        cfg.split_mode()?,
    )?)
}

/// CSV with columns `outer,inner,role,subject_id`.
pub fn write_plan(path: &Path, plan: &SplitPlan) -> Result<()> {
    let mut out = String::from("outer,inner,role,subject_id\n");
    for (outer, inner, role, id) in plan.rows() {
        out.push_str(&format!("{outer},{inner},{role},{id}\n"));
    }
    std::fs::write(path, out).at(path)
}

/// Rows of a written plan as `(outer, inner, role, subject_id)`.
pub fn read_plan(path: &Path) -> Result<Vec<(usize, usize, String, String)>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("outer,inner,role,subject_id") {
        return Err(PipelineError::format(path, "unexpected split plan header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let err = |m: &str| PipelineError::Parse { path: path.to_path_buf(), line: i as u64 + 2, message: m.into() };
            let f: Vec<&str> = line.splitn(4, ',').collect();
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            Ok((
                f[0].parse().map_err(|_| err("bad outer index"))?,
                f[1].parse().map_err(|_| err("bad inner index"))?,
                f[2].to_string(),
                f[3].to_string(),
            ))
        })
        .collect()
}
