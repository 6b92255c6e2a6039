//! Command-line interface.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::data::load_subjects;
use crate::error::{IoContext, PipelineError};
use crate::infer::run_inference;
use crate::io::read_manifest;
use crate::preview::write_preview;
use crate::splits::{plan_for, write_plan, SPLIT_PLAN};
use crate::trainer::{metric_name, run_fold, RESOLVED_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "medpipe", version, about = "Config-driven training and inference for medical-imaging CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Device {
    Cpu,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Subject manifest (CSV: SubjectID, Channel_0.., Label).
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment configuration (YAML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long, env = "MEDPIPE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Device::Cpu)]
    pub device: Device,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the cross-validation plan to split_plan.csv.
    Split(Common),
    /// Train every fold of the plan.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of fold processes to run at once.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        parallel: u16,
    },
    /// Predict the manifest with the trained fold models.
    Infer(Common),
    /// Write before/after images of the configured augmentations.
    Preview {
        #[command(flatten)]
        common: Common,
        /// Subject to preview (default: the first in the manifest).
        #[arg(long)]
        subject: Option<String>,
    },
    /// Train a single fold (used by `train --parallel`).
    #[command(hide = true)]
    Fold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        outer: usize,
        #[arg(long)]
        inner: usize,
    },
}

/// A runtime failure together with the pipeline stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: PipelineError,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<PipelineError>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, source: e.into() })
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig, StageError> {
    let mut cfg = PipelineConfig::from_path(&c.config).stage("configuration")?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_output(dir: &Path) -> Result<(), StageError> {
    fs::create_dir_all(dir).at(dir).stage("output setup")
}

pub fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Split(c) => {
            let cfg = load_config(&c)?;
            let records = read_manifest(&c.data, cfg.task(), false).stage("manifest")?;
            let plan = plan_for(&records, &cfg).stage("split")?;
            prepare_output(&c.output)?;
            write_plan(&c.output.join(SPLIT_PLAN), &plan).stage("split")?;
            log::info!("wrote {} fold(s) to {}", plan.folds.len(), c.output.join(SPLIT_PLAN).display());
            Ok(())
        }
        Command::Train { common: c, parallel } => train(&c, parallel as usize),
        Command::Fold { common: c, outer, inner } => {
            let cfg = load_config(&c)?;
            let records = read_manifest(&c.data, cfg.task(), true).stage("manifest")?;
            let plan = plan_for(&records, &cfg).stage("split")?;
            let fold = plan.fold(outer, inner).ok_or_else(|| StageError {
                stage: "split",
                source: PipelineError::Config(format!("the plan has no fold outer {outer} inner {inner}")),
            })?;
            let subjects = load_subjects(&records, &cfg).stage("data loading")?;
            run_fold(&cfg, &subjects, fold, &c.output).stage("training")?;
            Ok(())
        }
        Command::Infer(c) => {
            let cfg = load_config(&c)?;
            let records = read_manifest(&c.data, cfg.task(), false).stage("manifest")?;
            let subjects = load_subjects(&records, &cfg).stage("data loading")?;
            let rows = run_inference(&cfg, &subjects, &c.output).stage("inference")?;
            let dice: Vec<f64> = rows.iter().filter_map(|r| r.dice.as_ref().map(|d| d.1)).collect();
            if !dice.is_empty() {
                log::info!("mean Dice over {} subject(s): {:.4}", dice.len(), dice.iter().sum::<f64>() / dice.len() as f64);
            }
            let errs: Vec<f64> = rows.iter().filter_map(|r| r.target.map(|t| t.1)).collect();
            if !errs.is_empty() {
                log::info!(
                    "mean {} over {} subject(s): {:.6}",
                    metric_name(cfg.task()),
                    errs.len(),
                    errs.iter().sum::<f64>() / errs.len() as f64
                );
            }
            Ok(())
        }
        Command::Preview { common: c, subject } => {
            let cfg = load_config(&c)?;
            let records = read_manifest(&c.data, cfg.task(), false).stage("manifest")?;
            let record = match &subject {
                Some(id) => records.iter().find(|r| &r.subject_id == id).ok_or_else(|| StageError {
                    stage: "manifest",
                    source: PipelineError::Validation(format!("subject {id} is not in the manifest")),
                })?,
                None => &records[0],
            };
            let subjects = load_subjects(std::slice::from_ref(record), &cfg).stage("data loading")?;
            prepare_output(&c.output)?;
            for p in write_preview(&cfg, &subjects[0], &c.output).stage("preview")? {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn train(c: &Common, parallel: usize) -> Result<(), StageError> {
    let cfg = load_config(c)?;
    let records = read_manifest(&c.data, cfg.task(), true).stage("manifest")?;
    let plan = plan_for(&records, &cfg).stage("split")?;
    prepare_output(&c.output)?;
    write_plan(&c.output.join(SPLIT_PLAN), &plan).stage("split")?;
    let resolved = c.output.join(RESOLVED_CONFIG);
    fs::write(&resolved, cfg.to_yaml()).at(&resolved).stage("output setup")?;
    if parallel <= 1 {
        let subjects = load_subjects(&records, &cfg).stage("data loading")?;
        for fold in &plan.folds {
            let report = run_fold(&cfg, &subjects, fold, &c.output).stage("training")?;
            log::info!(
                "fold outer {} inner {}: best validation loss {:.5} at epoch {}",
                fold.outer,
                fold.inner,
                report.best_val_loss,
                report.best_epoch
            );
        }
        return Ok(());
    }
    let exe = std::env::current_exe().at(Path::new("medpipe")).stage("fold launch")?;
    let mut pending: Vec<(usize, usize)> = plan.folds.iter().map(|f| (f.outer, f.inner)).collect();
    pending.reverse();
    let mut running: Vec<((usize, usize), Child)> = Vec::new();
    let mut failed = Vec::new();
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < parallel {
            let Some((outer, inner)) = pending.pop() else { break };
            let child = Process::new(&exe)
                .arg("fold")
                .arg("--data")
                .arg(&c.data)
                .arg("--config")
                .arg(&c.config)
                .arg("--output")
                .arg(&c.output)
                .arg("--seed")
                .arg(cfg.seed.to_string())
                .arg("--outer")
                .arg(outer.to_string())
                .arg("--inner")
                .arg(inner.to_string())
                .spawn()
                .at(&exe)
                .stage("fold launch")?;
            log::info!("launched fold outer {outer} inner {inner} (pid {})", child.id());
            running.push(((outer, inner), child));
        }
        // Wait on the oldest process; the others keep running meanwhile.
        let ((outer, inner), mut child) = running.remove(0);
        let status = child.wait().at(&exe).stage("fold launch")?;
        if !status.success() {
            failed.push(format!("outer {outer} inner {inner} ({status})"));
        }
    }
    if !failed.is_empty() {
        return Err(StageError {
            stage: "training",
            source: PipelineError::Training(format!(
                "fold process(es) failed: {}; partial output is under {}",
                failed.join(", "),
                c.output.display()
            )),
        });
    }
    Ok(())
}
