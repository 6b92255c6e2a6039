//! Cross-fold inference over a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use medpipe_core::inference::{aggregate_classification, aggregate_regression, aggregate_segmentation, dice_per_class};
use medpipe_core::models::{ModelGraph, Task};
use medpipe_core::Real;

use crate::checkpoint;
use crate::config::PipelineConfig;
use crate::data::{class_index, Subject};
use crate::error::{IoContext, PipelineError, Result};
use crate::evaluate::{predict, Output};
use crate::io::mha;
use crate::trainer::BEST;

pub const RESULTS: &str = "results.csv";
pub const PREDICTIONS: &str = "predictions";

fn indexed_dirs(dir: &Path, prefix: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let entry = entry.at(dir)?;
        let name = entry.file_name();
        let Some(idx) = name.to_str().and_then(|n| n.strip_prefix(prefix)).and_then(|n| n.parse().ok()) else {
            continue;
        };
        if entry.path().is_dir() {
            out.push((idx, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Best-model checkpoints under `output/outer_*/inner_*`, in fold order.
pub fn find_models(output: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let outers = if output.is_dir() { indexed_dirs(output, "outer_")? } else { Vec::new() };
    for (_, outer) in outers {
        for (_, inner) in indexed_dirs(&outer, "inner_")? {
            let p = inner.join(BEST);
            if p.is_file() {
                found.push(p);
            }
        }
    }
    if found.is_empty() {
        return Err(PipelineError::Validation(format!(
            "no trained models ({BEST}) under {}/outer_*/inner_*; run `train` first",
            output.display()
        )));
    }
    Ok(found)
}

pub fn load_models(output: &Path, cfg: &PipelineConfig) -> Result<Vec<ModelGraph>> {
    let expected = cfg.arch_spec();
    find_models(output)?
        .iter()
        .map(|p| {
            let ck = checkpoint::load(p)?;
            if *ck.model.spec() != expected || ck.model.task() != cfg.task() {
                return Err(PipelineError::Validation(format!(
                    "{} was trained with a different model configuration",
                    p.display()
                )));
            }
            Ok(ck.model)
        })
        .collect()
}

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub subject_id: String,
    /// Mask path, predicted value or predicted class.
    pub prediction: String,
    /// Per-foreground-class Dice and their mean (segmentation with a mask).
    pub dice: Option<(Vec<Real>, Real)>,
    /// Ground-truth value and the squared error or correctness.
    pub target: Option<(f64, f64)>,
}

fn header(task: Task, classes: usize) -> Vec<String> {
    let mut h = vec!["subject_id".to_string(), "prediction".to_string()];
    match task {
        Task::Segmentation => {
            h.extend((1..classes.max(2)).map(|c| format!("dice_{c}")));
            h.push("dice_mean".into());
        }
        Task::Regression => h.extend(["target".into(), "squared_error".into()]),
        Task::Classification => h.extend(["target".into(), "correct".into()]),
    }
    h
}

fn row_fields(row: &ResultRow, width: usize) -> Vec<String> {
    let mut f = vec![row.subject_id.clone(), row.prediction.clone()];
    if let Some((per, mean)) = &row.dice {
        f.extend(per.iter().map(|d| d.to_string()));
        f.push(mean.to_string());
    }
    if let Some((t, e)) = row.target {
        f.extend([t.to_string(), e.to_string()]);
    }
    f.resize(width, String::new());
    f
}

/// Predict every subject with every model, aggregate across folds, write
/// predicted masks under `output/predictions` and `output/results.csv`.
pub fn run_inference(cfg: &PipelineConfig, subjects: &[Subject], output: &Path) -> Result<Vec<ResultRow>> {
    let models = load_models(output, cfg)?;
    log::info!("aggregating {} fold model(s) over {} subject(s)", models.len(), subjects.len());
    let task = cfg.task();
    let classes = &cfg.model.class_list;
    let pred_dir = output.join(PREDICTIONS);
    if task == Task::Segmentation {
        fs::create_dir_all(&pred_dir).at(&pred_dir)?;
    }
    let mut rows = Vec::with_capacity(subjects.len());
    for s in subjects {
        let outputs: Vec<Output> = models.iter().map(|m| predict(m, &s.image, cfg)).collect::<Result<_>>()?;
        let row = match task {
            Task::Segmentation => {
                let maps: Vec<_> = outputs
                    .into_iter()
                    .map(|o| match o {
                        Output::Probabilities(p) => p,
                        Output::Scores(_) => unreachable!("segmentation models stitch maps"),
                    })
                    .collect();
                let (_, labels) = aggregate_segmentation(&maps)?;
                let path = pred_dir.join(format!("{}_seg.mha", s.id));
                mha::write(&labels.map(|k| classes[k as usize] as Real), &path)?;
                let dice = match &s.mask {
                    Some(m) => Some(dice_per_class(&labels, m, classes.len())?),
                    None => None,
                };
                ResultRow { subject_id: s.id.clone(), prediction: path.display().to_string(), dice, target: None }
            }
            _ => {
                let scores: Vec<Vec<Real>> = outputs
                    .into_iter()
                    .map(|o| match o {
                        Output::Scores(v) => v,
                        Output::Probabilities(_) => unreachable!("non-segmentation models emit scores"),
                    })
                    .collect();
                let (pred, target) = if task == Task::Regression {
                    let p = aggregate_regression(&scores)?[0];
                    (p, s.value.map(|t| (t, (p - t) * (p - t))))
                } else {
                    let p = classes[aggregate_classification(&scores)?];
                    let correct = |t: f64| f64::from(class_index(classes, t) == class_index(classes, p));
                    (p, s.value.map(|t| (t, correct(t))))
                };
                ResultRow { subject_id: s.id.clone(), prediction: pred.to_string(), dice: None, target }
            }
        };
        rows.push(row);
    }
    let path = output.join(RESULTS);
    let head = header(task, classes.len());
    let mut w = csv::Writer::from_path(&path).map_err(|e| PipelineError::format(&path, e.to_string()))?;
    let csv_err = |e: csv::Error| PipelineError::format(&path, e.to_string());
    w.write_record(&head).map_err(csv_err)?;
    for r in &rows {
        w.write_record(row_fields(r, head.len())).map_err(csv_err)?;
    }
    w.flush().at(&path)?;
    Ok(rows)
}
