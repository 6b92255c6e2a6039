//! Whole-subject prediction and scoring, shared by validation, test
//! metrics and the `infer` command.

use medpipe_core::inference::{argmax_labels, dice_per_class, sliding_window};
use medpipe_core::kernels::loss::loss_forward_backward;
use medpipe_core::models::{ModelGraph, Task};
use medpipe_core::patch::{extract_patch, PadPolicy};
use medpipe_core::{Image, Real, Tensor};

use crate::config::PipelineConfig;
use crate::data::{one_hot, value_target, Subject};
use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    /// Stitched per-class probability map.
    Probabilities(Image),
    /// Head outputs for the whole subject.
    Scores(Vec<Real>),
}

/// Loss and task metric of one or more subjects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub loss: f64,
    /// Mean foreground Dice, MSE or accuracy, depending on the task.
    pub metric: f64,
}

/// Corner that centres a `size` window on an image (negative when the
/// window is larger, which zero-pads).
pub fn centred_corner(extents: &[usize], size: &[usize]) -> Vec<i64> {
    extents.iter().zip(size).map(|(&e, &s)| (e as i64 - s as i64) / 2).collect()
}

/// Network input for non-segmentation tasks: the centred patch.
pub fn whole_input(image: &Image, patch: &[usize]) -> Result<Tensor> {
    Ok(extract_patch(image, &centred_corner(image.extents(), patch), patch, PadPolicy::Zero)?.to_tensor())
}

pub fn predict(model: &ModelGraph, image: &Image, cfg: &PipelineConfig) -> Result<Output> {
    match model.task() {
        Task::Segmentation => {
            let stitched = sliding_window(image, &cfg.patch_size, cfg.inference.overlap, cfg.stitch_mode()?, |b| {
                model.predict(b)
            })?;
            Ok(Output::Probabilities(stitched.prediction.map))
        }
        _ => Ok(Output::Scores(model.predict(&whole_input(image, &cfg.patch_size)?)?.into_data())),
    }
}

fn missing(id: &str, what: &str) -> PipelineError {
    PipelineError::Validation(format!("subject {id} has no {what} to evaluate against"))
}

/// Score a prediction against the subject's ground truth.
pub fn score(output: &Output, subject: &Subject, cfg: &PipelineConfig) -> Result<Score> {
    let kind = cfg.loss_function.kind();
    match output {
        Output::Probabilities(probs) => {
            let mask = subject.mask.as_ref().ok_or_else(|| missing(&subject.id, "mask"))?;
            let classes = probs.channels();
            let (loss, _) = loss_forward_backward(&probs.to_tensor(), &one_hot(mask, classes), kind)?;
            let (_, dice) = dice_per_class(&argmax_labels(probs), mask, classes)?;
            Ok(Score { loss, metric: dice })
        }
        Output::Scores(scores) => {
            let value = subject.value.ok_or_else(|| missing(&subject.id, "label"))?;
            let task = cfg.task();
            let target = value_target(value, task, &cfg.model.class_list)?;
            let pred = Tensor::new(target.shape(), scores.clone())?;
            let (loss, _) = loss_forward_backward(&pred, &target, kind)?;
            let metric = match task {
                Task::Classification => {
                    let best = (0..scores.len()).fold(0, |b, c| if scores[c] > scores[b] { c } else { b });
                    f64::from(target.data()[best] == 1.0)
                }
                _ => (scores[0] - value) * (scores[0] - value),
            };
            Ok(Score { loss, metric })
        }
    }
}

pub fn evaluate_subject(model: &ModelGraph, subject: &Subject, cfg: &PipelineConfig) -> Result<(Output, Score)> {
    let out = predict(model, &subject.image, cfg)?;
    let s = score(&out, subject, cfg)?;
    Ok((out, s))
}

/// Mean loss and metric over `subjects`, accumulated in order.
pub fn evaluate(model: &ModelGraph, subjects: &[&Subject], cfg: &PipelineConfig) -> Result<Score> {
    if subjects.is_empty() {
        return Err(PipelineError::Validation("no subjects to evaluate".into()));
    }
    let (mut loss, mut metric) = (0.0, 0.0);
    for s in subjects {
        let (_, sc) = evaluate_subject(model, s, cfg)?;
        loss += sc.loss;
        metric += sc.metric;
    }
    let n = subjects.len() as f64;
    Ok(Score { loss: loss / n, metric: metric / n })
}
