//! Per-fold training loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use medpipe_core::augment::{compose, AugmentationPlan, Sample};
use medpipe_core::crossval::Fold;
use medpipe_core::models::{build, ModelGraph, Task};
use medpipe_core::optim::{schedule_lr, sgd_step};
use medpipe_core::patch::{draw_corner, epoch_jobs, extract_patch, foreground_voxels, Job, LabelPolicy, PadPolicy};
use medpipe_core::{Real, Rng, Tape, Tensor};

use crate::checkpoint;
use crate::config::PipelineConfig;
use crate::data::{one_hot, value_target, Subject};
use crate::error::{IoContext, PipelineError, Result};
use crate::evaluate::{evaluate, evaluate_subject, Score};
use crate::queue::{run_epoch, QueueStats};

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_metric,lr,seconds";
pub const LATEST: &str = "model_latest.ckpt";
pub const BEST: &str = "model_best.ckpt";
pub const LOGS: &str = "logs.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.yaml";
pub const TEST_METRICS: &str = "test_metrics.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochLog {
    fn row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.val_loss, self.val_metric, self.lr, self.seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub queue: QueueStats,
}

pub fn fold_dir(output: &Path, outer: usize, inner: usize) -> PathBuf {
    output.join(format!("outer_{outer}")).join(format!("inner_{inner}"))
}

/// Seed of one fold's model initialisation and sampling streams.
pub fn fold_seed(seed: u64, outer: usize, inner: usize) -> u64 {
    Rng::for_item(seed, ((outer as u64) << 32) | inner as u64).next_u64()
}

/// Name of the validation metric column for a task.
pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Segmentation => "dice",
        Task::Regression => "squared_error",
        Task::Classification => "accuracy",
    }
}

struct Item {
    input: Tensor,
    target: Tensor,
}

struct Producer<'a> {
    cfg: &'a PipelineConfig,
    subjects: &'a [&'a Subject],
    foreground: Vec<Vec<usize>>,
    plan: AugmentationPlan,
    policy: LabelPolicy,
}

impl Producer<'_> {
    fn produce(&self, job: &Job) -> Result<Item> {
        let subject = self.subjects[job.subject];
        let size = &self.cfg.patch_size;
        let mut rng = Rng::new(job.seed);
        let ext = subject.image.extents();
        let draw = draw_corner(ext, size, &self.foreground[job.subject], self.policy, &mut rng);
        if draw.fell_back {
            log::warn!("subject {} has an empty mask; sampling its patch uniformly", subject.id);
        }
        let image = extract_patch(&subject.image, &draw.corner, size, PadPolicy::Zero)?;
        let mask = match &subject.mask {
            Some(m) if self.cfg.task() == Task::Segmentation => {
                Some(extract_patch(m, &draw.corner, size, PadPolicy::Zero)?)
            }
            _ => None,
        };
        let sample = compose(&self.plan, &Sample::new(image, mask)?, &mut rng)?;
        let target = match &sample.mask {
            Some(m) => {
                let top = (self.cfg.classes() - 1) as Real;
                one_hot(&m.map(|v| v.round().clamp(0.0, top)), self.cfg.classes())
            }
            None => {
                let value = subject
                    .value
                    .ok_or_else(|| PipelineError::Validation(format!("subject {} has no label", subject.id)))?;
                value_target(value, self.cfg.task(), &self.cfg.model.class_list)?
            }
        };
        Ok(Item { input: sample.image.to_tensor(), target })
    }
}

/// Accumulates queue items into batches and takes SGD steps.
struct Stepper<'a> {
    model: &'a mut ModelGraph,
    cfg: &'a PipelineConfig,
    epoch: usize,
    lr: Real,
    pending: Vec<Item>,
    batches: usize,
    loss_sum: f64,
    items: usize,
}

impl Stepper<'_> {
    fn push(&mut self, item: Item) -> Result<()> {
        self.pending.push(item);
        if self.pending.len() == self.cfg.batch_size {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let batch: Vec<Item> = std::mem::take(&mut self.pending);
        let inputs: Vec<Tensor> = batch.iter().map(|i| i.input.clone()).collect();
        let targets: Vec<Tensor> = batch.iter().map(|i| i.target.clone()).collect();
        let x = Tensor::stack(&inputs, true)?;
        let target = Tensor::stack(&targets, true)?;
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let y = self.model.forward_train(&mut tape, xv)?;
        let l = tape.loss(y, &target, self.cfg.loss_function.kind())?;
        let loss = tape.value(l).item();
        if !loss.is_finite() {
            return Err(PipelineError::Training(format!(
                "non-finite loss {loss} at epoch {}, batch {}",
                self.epoch, self.batches
            )));
        }
        tape.backward_into(l, self.model.params_mut())?;
        sgd_step(self.model.params_mut(), self.lr, self.cfg.optimizer.momentum as Real)?;
        self.batches += 1;
        self.loss_sum += loss * batch.len() as f64;
        self.items += batch.len();
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

/// Train one fold into `dir`: `logs.csv`, `model_latest.ckpt`,
/// `model_best.ckpt` and `resolved_config.yaml`.
pub fn train_fold(
    cfg: &PipelineConfig,
    train: &[&Subject],
    validation: &[&Subject],
    dir: &Path,
    seed: u64,
) -> Result<FoldReport> {
    if train.is_empty() || validation.is_empty() {
        return Err(PipelineError::Validation("a fold needs training and validation subjects".into()));
    }
    fs::create_dir_all(dir).at(dir)?;
    write_text(&dir.join(RESOLVED_CONFIG), &cfg.to_yaml())?;
    let task = cfg.task();
    let mut model = build(&cfg.arch_spec(), task, Rng::for_item(seed, 1).next_u64())?;
    let producer = Producer {
        cfg,
        subjects: train,
        foreground: train
            .iter()
            .map(|s| match (&s.mask, task) {
                (Some(m), Task::Segmentation) => foreground_voxels(m),
                _ => Vec::new(),
            })
            .collect(),
        plan: cfg.augmentation_plan()?,
        policy: cfg.label_policy(),
    };

    let log_path = dir.join(LOGS);
    let mut log_file = BufWriter::new(File::create(&log_path).at(&log_path)?);
    writeln!(log_file, "{LOG_HEADER}").at(&log_path)?;
    log_file.flush().at(&log_path)?;

    let mut logs = Vec::with_capacity(cfg.num_epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut queue = QueueStats::default();
    for epoch in 0..cfg.num_epochs {
        let start = Instant::now();
        let lr = schedule_lr(cfg.learning_rate as Real, cfg.scheduler()?, epoch)?;
        let jobs = epoch_jobs(train.len(), cfg.q_samples_per_volume, true, seed, epoch as u64);
        let mut stepper = Stepper {
            model: &mut model,
            cfg,
            epoch,
            lr,
            pending: Vec::with_capacity(cfg.batch_size),
            batches: 0,
            loss_sum: 0.0,
            items: 0,
        };
        let stats = run_epoch(&jobs, cfg.q_num_workers, cfg.q_max_length, |j| producer.produce(j), |item| {
            stepper.push(item)
        })?;
        stepper.step()?;
        let train_loss = stepper.loss_sum / stepper.items as f64;
        queue.produced += stats.produced;
        queue.max_buffered = queue.max_buffered.max(stats.max_buffered);

        let Score { loss: val_loss, metric: val_metric } = evaluate(&model, validation, cfg)?;
        checkpoint::save(&dir.join(LATEST), &model, epoch, val_loss)?;
        if best.is_none_or(|(_, b)| val_loss < b) {
            checkpoint::save(&dir.join(BEST), &model, epoch, val_loss)?;
            best = Some((epoch, val_loss));
        }
        let row = EpochLog { epoch, train_loss, val_loss, val_metric, lr, seconds: start.elapsed().as_secs_f64() };
        writeln!(log_file, "{}", row.row()).at(&log_path)?;
        log_file.flush().at(&log_path)?;
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5} {} {val_metric:.5}",
            metric_name(task)
        );
        logs.push(row);
    }
    let (best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    Ok(FoldReport { logs, best_epoch, best_val_loss, queue })
}

/// Score the fold's best model on its test subjects and write
/// `test_metrics.csv`. Returns the per-subject scores.
pub fn test_fold(cfg: &PipelineConfig, test: &[&Subject], dir: &Path) -> Result<Vec<Score>> {
    let ckpt = checkpoint::load(&dir.join(BEST))?;
    let path = dir.join(TEST_METRICS);
    let mut w = csv::Writer::from_path(&path).map_err(|e| PipelineError::format(&path, e.to_string()))?;
    let csv_err = |e: csv::Error| PipelineError::format(&path, e.to_string());
    w.write_record(["subject_id", "loss", metric_name(cfg.task())]).map_err(csv_err)?;
    let mut scores = Vec::with_capacity(test.len());
    for s in test {
        let (_, sc) = evaluate_subject(&ckpt.model, s, cfg)?;
        w.write_record([s.id.clone(), sc.loss.to_string(), sc.metric.to_string()]).map_err(csv_err)?;
        scores.push(sc);
    }
    w.flush().at(&path)?;
    Ok(scores)
}

/// Select a fold's subjects by id, in fold order.
pub fn select<'a>(subjects: &'a [Subject], ids: &[String]) -> Result<Vec<&'a Subject>> {
    ids.iter()
        .map(|id| {
            subjects
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| PipelineError::Validation(format!("split plan names unknown subject {id}")))
        })
        .collect()
}

/// Train, then test, one fold of a plan under `output`.
pub fn run_fold(cfg: &PipelineConfig, subjects: &[Subject], fold: &Fold, output: &Path) -> Result<FoldReport> {
    let dir = fold_dir(output, fold.outer, fold.inner);
    let train = select(subjects, &fold.train)?;
    let validation = select(subjects, &fold.validation)?;
    let test = select(subjects, &fold.test)?;
    log::info!(
        "fold outer {} inner {}: {} train, {} validation, {} test",
        fold.outer,
        fold.inner,
        train.len(),
        validation.len(),
        test.len()
    );
    let report = train_fold(cfg, &train, &validation, &dir, fold_seed(cfg.seed, fold.outer, fold.inner))?;
    if !test.is_empty() {
        test_fold(cfg, &test, &dir)?;
    }
    Ok(report)
}

/// Parse a `logs.csv` back into rows.
pub fn read_logs(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(PipelineError::format(path, format!("header is not {LOG_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<f64> = line.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| {
                PipelineError::Parse { path: path.to_path_buf(), line: i as u64 + 2, message: format!("{e}") }
            })?;
            if f.len() != 6 {
                return Err(PipelineError::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: format!("{} fields, expected 6", f.len()),
                });
            }
            Ok(EpochLog {
                epoch: f[0] as usize,
                train_loss: f[1],
                val_loss: f[2],
                val_metric: f[3],
                lr: f[4],
                seconds: f[5],
            })
        })
        .collect()
}

