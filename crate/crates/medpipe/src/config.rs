//! Experiment configuration (YAML).
//!
//! Unknown keys are rejected at every level. A handful of keys are
//! mandatory; everything else has a default, and [`PipelineConfig::to_yaml`]
//! writes the fully resolved document so a run can be reproduced from its
//! output directory alone.

use std::path::Path;

use indexmap::IndexMap;
use medpipe_core::augment::{AugKind, AugmentationPlan, PlanEntry, Span};
use medpipe_core::crossval::SplitMode;
use medpipe_core::inference::StitchMode;
use medpipe_core::kernels::loss::LossKind;
use medpipe_core::models::{ArchSpec, Architecture, FinalActivation, Task};
use medpipe_core::optim::Scheduler;
use medpipe_core::patch::LabelPolicy;
use medpipe_core::preprocess::{IntensityRange, ResampleTarget, Step, ZscoreRegion};
use medpipe_core::Real;
use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::error::{IoContext, PipelineError, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default probability of an augmentation entry.
pub const DEFAULT_PROBABILITY: f64 = 0.35;

fn cfg_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFunction {
    Dice,
    Mse,
    CrossEntropy,
}

impl LossFunction {
    pub fn kind(self) -> LossKind {
        match self {
            LossFunction::Dice => LossKind::Dice,
            LossFunction::Mse => LossKind::Mse,
            LossFunction::CrossEntropy => LossKind::CrossEntropy,
        }
    }

    pub fn task(self) -> Task {
        match self {
            LossFunction::Dice => Task::Segmentation,
            LossFunction::Mse => Task::Regression,
            LossFunction::CrossEntropy => Task::Classification,
        }
    }

    fn name(self) -> &'static str {
        match self {
            LossFunction::Dice => "dice",
            LossFunction::Mse => "mse",
            LossFunction::CrossEntropy => "cross_entropy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Segmentation,
    Regression,
    Classification,
}

impl ProblemType {
    pub fn task(self) -> Task {
        match self {
            ProblemType::Segmentation => Task::Segmentation,
            ProblemType::Regression => Task::Regression,
            ProblemType::Classification => Task::Classification,
        }
    }

    fn from_task(t: Task) -> Self {
        match t {
            Task::Segmentation => ProblemType::Segmentation,
            Task::Regression => ProblemType::Regression,
            Task::Classification => ProblemType::Classification,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionWindow {
    pub minimum: String,
    pub maximum: String,
}

impl Default for VersionWindow {
    fn default() -> Self {
        Self { minimum: ARTIFACT_VERSION.into(), maximum: ARTIFACT_VERSION.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: String,
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default = "default_base_filters")]
    pub base_filters: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub class_list: Vec<f64>,
    #[serde(default)]
    pub final_layer: Option<String>,
    #[serde(default = "one")]
    pub num_channels: usize,
    #[serde(default)]
    pub batch_norm: bool,
}

fn default_base_filters() -> usize {
    8
}
fn default_depth() -> usize {
    3
}
fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { kind: "constant".into(), gamma: None, step_size: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(rename = "type", default = "sgd")]
    pub kind: String,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn sgd() -> String {
    "sgd".into()
}
fn default_momentum() -> f64 {
    0.9
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: sgd(), momentum: default_momentum() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedConfig {
    #[serde(default = "five")]
    pub testing: usize,
    #[serde(default = "five")]
    pub validation: usize,
    #[serde(default = "nested")]
    pub mode: String,
}

fn five() -> usize {
    5
}
fn nested() -> String {
    "nested".into()
}

impl Default for NestedConfig {
    fn default() -> Self {
        Self { testing: 5, validation: 5, mode: nested() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default = "half")]
    pub overlap: f64,
    #[serde(default = "average")]
    pub stitch: String,
}

fn half() -> f64 {
    0.5
}
fn average() -> String {
    "average".into()
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { overlap: half(), stitch: average() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PreprocessConfig {
    Threshold { min: f64, max: f64 },
    Clip { min: f64, max: f64 },
    Rescale {
        #[serde(default)]
        min: f64,
        #[serde(default = "unit")]
        max: f64,
    },
    Zscore {
        #[serde(default = "full")]
        region: String,
    },
    Resample {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spacing: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extents: Option<Vec<usize>>,
    },
    CropZeroPlanes,
}

fn unit() -> f64 {
    1.0
}
fn full() -> String {
    "full".into()
}

impl PreprocessConfig {
    pub fn step(&self) -> Result<Step> {
        Ok(match self {
            PreprocessConfig::Threshold { min, max } => Step::Threshold(IntensityRange::new(*min as Real, *max as Real)?),
            PreprocessConfig::Clip { min, max } => Step::Clip(IntensityRange::new(*min as Real, *max as Real)?),
            PreprocessConfig::Rescale { min, max } => {
                if !(min < max) {
                    return Err(cfg_err(format!("rescale needs min < max, got [{min}, {max}]")));
                }
                Step::Rescale { min: *min as Real, max: *max as Real }
            }
            PreprocessConfig::Zscore { region } => Step::Zscore(match region.as_str() {
                "full" => ZscoreRegion::Full,
                "nonzero" => ZscoreRegion::Nonzero,
                "label" => ZscoreRegion::Label,
                other => return Err(cfg_err(format!("zscore region {other:?}; use full, nonzero or label"))),
            }),
            PreprocessConfig::Resample { spacing, extents } => match (spacing, extents) {
                (Some(s), None) => {
                    if s.iter().any(|v| !(*v > 0.0)) {
                        return Err(cfg_err(format!("resample spacing must be positive, got {s:?}")));
                    }
                    Step::Resample(ResampleTarget::Spacing(s.clone()))
                }
                (None, Some(e)) => {
                    if e.contains(&0) {
                        return Err(cfg_err(format!("resample extents must be positive, got {e:?}")));
                    }
                    Step::Resample(ResampleTarget::Extents(e.clone()))
                }
                _ => return Err(cfg_err("resample needs exactly one of spacing or extents (e.g. spacing: [1.0, 1.0, 2.0])")),
            },
            PreprocessConfig::CropZeroPlanes => Step::CropZeroPlanes,
        })
    }
}

macro_rules! aug_config {
    ($name:ident { $($field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            pub probability: f64,
            $(pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { probability: DEFAULT_PROBABILITY, $($field: $default,)* }
            }
        }
    };
}

aug_config!(AffineConfig { degrees: [f64; 2] = [-15.0, 15.0], scale: [f64; 2] = [0.9, 1.1], translation: [f64; 2] = [-2.0, 2.0] });
aug_config!(ElasticConfig { control_points: usize = 5, max_displacement: f64 = 2.0 });
aug_config!(FlipConfig { axes: Vec<usize> = vec![0] });
aug_config!(RotateConfig { angles: Vec<u32> = vec![90, 180], axes: [usize; 2] = [0, 1] });
aug_config!(AnisotropyConfig { axes: Vec<usize> = vec![0], factor: [f64; 2] = [1.5, 3.0] });
aug_config!(BlurConfig { sigma: [f64; 2] = [0.0, 1.0] });
aug_config!(NoiseConfig { mean: f64 = 0.0, std: [f64; 2] = [0.0, 0.1] });
aug_config!(GammaConfig { gamma: [f64; 2] = [0.7, 1.5] });
aug_config!(BiasFieldConfig { order: usize = 3, coefficients: f64 = 0.3 });
aug_config!(MotionConfig { num_transforms: usize = 2, translation: [f64; 2] = [-2.0, 2.0] });
aug_config!(GhostingConfig { num_ghosts: [usize; 2] = [4, 10], axes: Vec<usize> = vec![0], intensity: [f64; 2] = [0.3, 0.7] });
aug_config!(SpikeConfig { num_spikes: usize = 1, intensity: [f64; 2] = [0.1, 0.3] });

fn span(r: [f64; 2]) -> Span {
    Span::new(r[0], r[1])
}

/// Parse one `data_augmentation` entry; returns the kind, its probability
/// and the entry with defaults filled in.
fn parse_augmentation(key: &str, value: &Value) -> Result<(AugKind, f64, Value)> {
    fn typed<T: serde::de::DeserializeOwned + Serialize>(key: &str, v: &Value) -> Result<(T, Value)> {
        let v = if v.is_null() { Value::Mapping(Default::default()) } else { v.clone() };
        let t: T = serde_yaml::from_value(v).map_err(|e| cfg_err(format!("data_augmentation.{key}: {e}")))?;
        let resolved = serde_yaml::to_value(&t).map_err(|e| cfg_err(e.to_string()))?;
        Ok((t, resolved))
    }
    Ok(match key {
        "affine" => {
            let (c, v) = typed::<AffineConfig>(key, value)?;
            (AugKind::Affine { degrees: span(c.degrees), scale: span(c.scale), translation: span(c.translation) }, c.probability, v)
        }
        "elastic" => {
            let (c, v) = typed::<ElasticConfig>(key, value)?;
            (AugKind::Elastic { control_points: c.control_points, max_displacement: c.max_displacement }, c.probability, v)
        }
        "flip" => {
            let (c, v) = typed::<FlipConfig>(key, value)?;
            (AugKind::Flip { axes: c.axes }, c.probability, v)
        }
        "rotate" => {
            let (c, v) = typed::<RotateConfig>(key, value)?;
            (AugKind::Rotate { angles: c.angles, axes: (c.axes[0], c.axes[1]) }, c.probability, v)
        }
        "anisotropy" => {
            let (c, v) = typed::<AnisotropyConfig>(key, value)?;
            (AugKind::Anisotropy { axes: c.axes, factor: span(c.factor) }, c.probability, v)
        }
        "blur" => {
            let (c, v) = typed::<BlurConfig>(key, value)?;
            (AugKind::Blur { sigma: span(c.sigma) }, c.probability, v)
        }
        "noise" => {
            let (c, v) = typed::<NoiseConfig>(key, value)?;
            (AugKind::Noise { mean: c.mean, std: span(c.std) }, c.probability, v)
        }
        "gamma" => {
            let (c, v) = typed::<GammaConfig>(key, value)?;
            (AugKind::Gamma { gamma: span(c.gamma) }, c.probability, v)
        }
        "bias_field" => {
            let (c, v) = typed::<BiasFieldConfig>(key, value)?;
            (AugKind::BiasField { order: c.order, coefficients: c.coefficients }, c.probability, v)
        }
        "motion" => {
            let (c, v) = typed::<MotionConfig>(key, value)?;
            (AugKind::Motion { num_transforms: c.num_transforms, translation: span(c.translation) }, c.probability, v)
        }
        "ghosting" => {
            let (c, v) = typed::<GhostingConfig>(key, value)?;
            (
                AugKind::Ghosting { num_ghosts: (c.num_ghosts[0], c.num_ghosts[1]), axes: c.axes, intensity: span(c.intensity) },
                c.probability,
                v,
            )
        }
        "spike" => {
            let (c, v) = typed::<SpikeConfig>(key, value)?;
            (AugKind::Spike { num_spikes: c.num_spikes, intensity: span(c.intensity) }, c.probability, v)
        }
        other => {
            return Err(cfg_err(format!(
                "unknown augmentation {other:?}; known: affine, elastic, flip, rotate, anisotropy, blur, noise, gamma, \
                 bias_field, motion, ghosting, spike"
            )))
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub version: VersionWindow,
    #[serde(default)]
    pub problem_type: Option<ProblemType>,
    pub model: ModelConfig,
    pub patch_size: Vec<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub num_epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    pub loss_function: LossFunction,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub nested_training: NestedConfig,
    #[serde(default, with = "serde_yaml::with::singleton_map_recursive")]
    pub data_preprocessing: Vec<PreprocessConfig>,
    #[serde(default)]
    pub data_augmentation: IndexMap<String, Value>,
    #[serde(default = "one")]
    pub q_samples_per_volume: usize,
    #[serde(default = "default_queue")]
    pub q_max_length: usize,
    #[serde(default = "one")]
    pub q_num_workers: usize,
    /// Share of training patches centred on foreground (segmentation).
    #[serde(default = "half")]
    pub q_foreground_ratio: f64,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    4
}
fn default_queue() -> usize {
    16
}

const MANDATORY: &[(&str, &str)] = &[
    ("model", "model: {architecture: resunet}"),
    ("patch_size", "patch_size: [64, 64]"),
    ("loss_function", "loss_function: dice"),
    ("num_epochs", "num_epochs: 20"),
    ("learning_rate", "learning_rate: 0.01"),
];

fn version_of(s: &str, which: &str) -> Result<semver::Version> {
    semver::Version::parse(s.trim()).map_err(|e| cfg_err(format!("version.{which} {s:?} is not a version: {e}")))
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_yaml(&text)
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let doc: Value = serde_yaml::from_str(text).map_err(|e| cfg_err(format!("not valid YAML: {e}")))?;
        let map = doc.as_mapping().ok_or_else(|| cfg_err("the configuration must be a key-value mapping"))?;
        for (key, example) in MANDATORY {
            if !map.contains_key(*key) {
                return Err(cfg_err(format!("missing mandatory key `{key}` (for example `{example}`)")));
            }
        }
        if let Some(m) = map.get("model").and_then(Value::as_mapping) {
            if !m.contains_key("architecture") {
                return Err(cfg_err("missing mandatory key `model.architecture` (for example `architecture: resunet`)"));
            }
        }
        let mut cfg: PipelineConfig = serde_yaml::from_value(doc).map_err(|e| cfg_err(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("configuration serialises")
    }

    /// Fill derived defaults and validate every section.
    fn resolve(&mut self) -> Result<()> {
        let min = version_of(&self.version.minimum, "minimum")?;
        let max = version_of(&self.version.maximum, "maximum")?;
        let current = semver::Version::parse(ARTIFACT_VERSION).expect("crate version is semver");
        if current < min || current > max {
            return Err(cfg_err(format!(
                "configuration requires medpipe between {min} and {max}, but this is medpipe {current}"
            )));
        }
        let task = self.loss_function.task();
        match self.problem_type {
            Some(p) if p.task() != task => {
                return Err(cfg_err(format!(
                    "loss_function {} is incompatible with problem_type {} (use {})",
                    self.loss_function.name(),
                    p.task().name(),
                    match p.task() {
                        Task::Segmentation => "dice",
                        Task::Regression => "mse",
                        Task::Classification => "cross_entropy",
                    }
                )));
            }
            _ => self.problem_type = Some(ProblemType::from_task(task)),
        }
        let dims = self.patch_size.len();
        match self.model.dimension {
            Some(d) if d != dims => {
                return Err(cfg_err(format!("model.dimension is {d} but patch_size {:?} has {dims} axes", self.patch_size)));
            }
            _ => self.model.dimension = Some(dims),
        }
        let arch: Architecture = self.model.architecture.parse()?;
        self.model.architecture = arch.name().into();
        if self.model.final_layer.is_none() {
            let d = match task {
                Task::Regression => "none",
                _ => "softmax",
            };
            self.model.final_layer = Some(d.into());
        }
        let fl: FinalActivation = self.model.final_layer.as_deref().unwrap_or("softmax").parse()?;
        self.model.final_layer = Some(fl.name().into());
        match task {
            Task::Segmentation | Task::Classification => {
                if self.model.class_list.is_empty() {
                    self.model.class_list = vec![0.0, 1.0];
                }
                if self.model.class_list.len() < 2 {
                    return Err(cfg_err("model.class_list needs at least two classes (for example [0, 1])"));
                }
            }
            Task::Regression => {
                if self.model.class_list.is_empty() {
                    self.model.class_list = vec![0.0];
                }
            }
        }
        let spec = self.arch_spec();
        spec.validate(task)?;
        spec.check_patch(&self.patch_size)?;
        if self.num_epochs == 0 {
            return Err(cfg_err("num_epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(cfg_err(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.q_samples_per_volume == 0 || self.q_max_length == 0 || self.q_num_workers == 0 {
            return Err(cfg_err("batch_size and the q_* counts must all be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.q_foreground_ratio) {
            return Err(cfg_err("q_foreground_ratio must lie in [0, 1]"));
        }
        if self.optimizer.kind != "sgd" {
            return Err(cfg_err(format!("optimizer {:?} is not supported; use sgd", self.optimizer.kind)));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(cfg_err(format!("optimizer.momentum must lie in [0, 1), got {}", self.optimizer.momentum)));
        }
        self.scheduler()?.validate()?;
        self.split_mode()?;
        if self.nested_training.testing < 2 || self.nested_training.validation < 2 {
            return Err(cfg_err("nested_training.testing and .validation must be at least 2"));
        }
        self.stitch_mode()?;
        if !(0.0..1.0).contains(&self.inference.overlap) {
            return Err(cfg_err("inference.overlap must lie in [0, 1)"));
        }
        for p in &self.data_preprocessing {
            p.step()?;
        }
        let mut resolved = IndexMap::new();
        for (k, v) in &self.data_augmentation {
            let (_, _, filled) = parse_augmentation(k, v)?;
            resolved.insert(k.clone(), filled);
        }
        self.data_augmentation = resolved;
        let plan = self.augmentation_plan()?;
        plan.validate()?;
        for e in &plan.entries {
            check_axes(&e.kind, dims)?;
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.loss_function.task()
    }

    pub fn classes(&self) -> usize {
        match self.task() {
            Task::Regression => 1,
            _ => self.model.class_list.len(),
        }
    }

    pub fn arch_spec(&self) -> ArchSpec {
        ArchSpec {
            architecture: self.model.architecture.parse().unwrap_or(Architecture::Unet),
            dims: self.patch_size.len(),
            in_channels: self.model.num_channels,
            classes: self.classes(),
            base_filters: self.model.base_filters,
            depth: self.model.depth,
            final_activation: self
                .model
                .final_layer
                .as_deref()
                .and_then(|f| f.parse().ok())
                .unwrap_or(FinalActivation::Softmax),
            batch_norm: self.model.batch_norm,
        }
    }

    pub fn scheduler(&self) -> Result<Scheduler> {
        match self.scheduler.kind.as_str() {
            "constant" => Ok(Scheduler::Constant),
            "step" => Ok(Scheduler::Step {
                gamma: self.scheduler.gamma.ok_or_else(|| cfg_err("step scheduler needs gamma (for example gamma: 0.5)"))? as Real,
                period: self
                    .scheduler
                    .step_size
                    .ok_or_else(|| cfg_err("step scheduler needs step_size (for example step_size: 10)"))?,
            }),
            other => Err(cfg_err(format!("scheduler {other:?}; use constant or step"))),
        }
    }

    pub fn split_mode(&self) -> Result<SplitMode> {
        Ok(self.nested_training.mode.parse()?)
    }

    pub fn stitch_mode(&self) -> Result<StitchMode> {
        match self.inference.stitch.as_str() {
            "average" => Ok(StitchMode::Average),
            "crop" => Ok(StitchMode::Crop),
            other => Err(cfg_err(format!("inference.stitch {other:?}; use average or crop"))),
        }
    }

    pub fn label_policy(&self) -> LabelPolicy {
        match self.task() {
            Task::Segmentation => LabelPolicy::ForegroundBiased(self.q_foreground_ratio),
            _ => LabelPolicy::Uniform,
        }
    }

    pub fn preprocessing_steps(&self) -> Result<Vec<Step>> {
        self.data_preprocessing.iter().map(PreprocessConfig::step).collect()
    }

    pub fn augmentation_plan(&self) -> Result<AugmentationPlan> {
        let entries = self
            .data_augmentation
            .iter()
            .map(|(k, v)| parse_augmentation(k, v).map(|(kind, probability, _)| PlanEntry { kind, probability }))
            .collect::<Result<Vec<_>>>()?;
        Ok(AugmentationPlan { entries })
    }
}

fn check_axes(kind: &AugKind, dims: usize) -> Result<()> {
    let axes: Vec<usize> = match kind {
        AugKind::Flip { axes } | AugKind::Anisotropy { axes, .. } | AugKind::Ghosting { axes, .. } => axes.clone(),
        AugKind::Rotate { axes, .. } => vec![axes.0, axes.1],
        _ => Vec::new(),
    };
    match axes.iter().find(|&&a| a >= dims) {
        Some(a) => Err(cfg_err(format!("{} axis {a} is invalid for {dims}D patches", kind.name()))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model: {architecture: resunet}\npatch_size: [32, 32]\nloss_function: dice\nnum_epochs: 2\nlearning_rate: 0.01\n";

    #[test]
    fn shipped_example_parses() {
        let cfg = PipelineConfig::from_yaml(include_str!("../configs/segmentation.yaml")).unwrap();
        assert_eq!(cfg.preprocessing_steps().unwrap().len(), 2);
        assert_eq!(cfg.augmentation_plan().unwrap().entries.len(), 4);
        assert!(cfg.scheduler().is_ok());
    }

    #[test]
    fn minimal_round_trips() {
        let cfg = PipelineConfig::from_yaml(MINIMAL).unwrap();
        assert_eq!(cfg.task(), Task::Segmentation);
        assert_eq!(cfg.model.dimension, Some(2));
        let again = PipelineConfig::from_yaml(&cfg.to_yaml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn missing_key_names_example() {
        let text = MINIMAL.replace("num_epochs: 2\n", "");
        let err = PipelineConfig::from_yaml(&text).unwrap_err().to_string();
        assert!(err.contains("num_epochs") && err.contains("num_epochs: 20"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_yaml(&format!("{MINIMAL}learning_rat: 0.1\n")).is_err());
        assert!(PipelineConfig::from_yaml(&format!("{MINIMAL}data_augmentation: {{flip: {{axis: [0]}}}}\n")).is_err());
    }

    #[test]
    fn loss_task_mismatch() {
        let err = PipelineConfig::from_yaml(&format!("{MINIMAL}problem_type: regression\n")).unwrap_err().to_string();
        assert!(err.contains("incompatible"), "{err}");
    }

    #[test]
    fn version_window_enforced() {
        let err = PipelineConfig::from_yaml(&format!("{MINIMAL}version: {{minimum: 99.0.0, maximum: 99.1.0}}\n"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("99.0.0") && err.contains(ARTIFACT_VERSION), "{err}");
    }

    #[test]
    fn sections_parse_in_order() {
        let text = format!(
            "{MINIMAL}data_preprocessing:\n  - resample: {{spacing: [1.0, 1.0]}}\n  - zscore: {{region: nonzero}}\n  - crop_zero_planes\n\
             data_augmentation:\n  rotate: {{probability: 0.5}}\n  flip: {{}}\n  noise: {{std: [0.0, 0.2]}}\n\
             scheduler: {{type: step, gamma: 0.1, step_size: 10}}\n"
        );
        let cfg = PipelineConfig::from_yaml(&text).unwrap();
        let names: Vec<_> = cfg.augmentation_plan().unwrap().entries.iter().map(|e| e.kind.name()).collect();
        assert_eq!(names, ["rotate", "flip", "noise"]);
        assert_eq!(cfg.preprocessing_steps().unwrap().len(), 3);
        assert_eq!(PipelineConfig::from_yaml(&cfg.to_yaml()).unwrap(), cfg);
    }
}
