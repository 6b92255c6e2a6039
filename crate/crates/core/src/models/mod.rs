//! Network architectures built on the tape.
//!
//! Every builder is a pure function of `(ArchSpec, seed)`: parameters are
//! registered in a fixed order and initialised from a seeded stream
//! (Kaiming-uniform on fan-in for weights, zero biases, unit norm scales).

mod layers;
mod unet;
mod vgg;

use alloc::{format, string::String, vec, vec::Vec};
use core::fmt;
use core::str::FromStr;

pub use unet::inception_split;
pub use vgg::{scaled_width, vgg_layout};

use crate::kernels::activation::Activation;
use crate::{Error, ParamStore, Result, Rng, Tape, Tensor, Var};
use layers::{Builder, Ctx};
use unet::{BlockKind, EncoderDecoder, Fcn};
use vgg::Vgg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Unet,
    ResUnet,
    Uinc,
    Fcn,
    Vgg11,
    Vgg13,
    Vgg16,
    Vgg19,
}

impl Architecture {
    pub const ALL: [Architecture; 8] = [
        Architecture::Unet,
        Architecture::ResUnet,
        Architecture::Uinc,
        Architecture::Fcn,
        Architecture::Vgg11,
        Architecture::Vgg13,
        Architecture::Vgg16,
        Architecture::Vgg19,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Unet => "unet",
            Architecture::ResUnet => "resunet",
            Architecture::Uinc => "uinc",
            Architecture::Fcn => "fcn",
            Architecture::Vgg11 => "vgg11",
            Architecture::Vgg13 => "vgg13",
            Architecture::Vgg16 => "vgg16",
            Architecture::Vgg19 => "vgg19",
        }
    }

    pub fn is_vgg(self) -> bool {
        matches!(self, Architecture::Vgg11 | Architecture::Vgg13 | Architecture::Vgg16 | Architecture::Vgg19)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FinalActivation {
    Softmax,
    Sigmoid,
    None,
}

impl FinalActivation {
    pub fn name(self) -> &'static str {
        match self {
            FinalActivation::Softmax => "softmax",
            FinalActivation::Sigmoid => "sigmoid",
            FinalActivation::None => "none",
        }
    }

    fn activation(self) -> Option<Activation> {
        match self {
            FinalActivation::Softmax => Some(Activation::Softmax(1)),
            FinalActivation::Sigmoid => Some(Activation::Sigmoid),
            FinalActivation::None => None,
        }
    }
}

impl FromStr for FinalActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(FinalActivation::Softmax),
            "sigmoid" => Ok(FinalActivation::Sigmoid),
            "none" | "linear" => Ok(FinalActivation::None),
            _ => Err(Error::config(format!("unknown final activation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Segmentation,
    Regression,
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Segmentation => "segmentation",
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "segmentation" => Ok(Task::Segmentation),
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            _ => Err(Error::config(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub architecture: Architecture,
    pub dims: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub base_filters: usize,
    /// Encoder levels of the segmentation networks (unused by VGG).
    pub depth: usize,
    pub final_activation: FinalActivation,
    /// Batch normalisation after every VGG convolution.
    pub batch_norm: bool,
}

impl ArchSpec {
    pub fn validate(&self, task: Task) -> Result<()> {
        if !(self.dims == 2 || self.dims == 3) {
            return Err(Error::config(format!("dims must be 2 or 3, got {}", self.dims)));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be at least 1"));
        }
        if self.classes == 0 {
            return Err(Error::config("classes must be at least 1"));
        }
        if self.base_filters == 0 {
            return Err(Error::config("base_filters must be at least 1"));
        }
        if self.architecture.is_vgg() {
            if task == Task::Segmentation {
                return Err(Error::config(format!(
                    "{} is a regression/classification network; use unet, resunet, uinc or fcn for segmentation",
                    self.architecture
                )));
            }
        } else {
            if task != Task::Segmentation {
                return Err(Error::config(format!(
                    "{} builds segmentation outputs; use a vgg variant for {}",
                    self.architecture,
                    task.name()
                )));
            }
            if self.depth < 2 {
                return Err(Error::config(format!("depth must be at least 2, got {}", self.depth)));
            }
            if self.architecture == Architecture::Uinc {
                inception_split(self.base_filters)?;
            }
        }
        Ok(())
    }

    /// Every spatial extent fed to the network must be a multiple of this.
    pub fn required_divisor(&self) -> usize {
        if self.architecture.is_vgg() {
            1 << Vgg::pool_count(self.architecture)
        } else {
            1 << (self.depth - 1)
        }
    }

    pub fn check_patch(&self, extents: &[usize]) -> Result<()> {
        if extents.len() != self.dims {
            return Err(Error::config(format!(
                "patch {:?} has {} axes, model is {}D",
                extents,
                extents.len(),
                self.dims
            )));
        }
        let d = self.required_divisor();
        if let Some(bad) = extents.iter().find(|&&e| e % d != 0 || e == 0) {
            return Err(Error::config(format!(
                "{} with this depth needs every patch extent divisible by {d} (got {bad} in {extents:?})",
                self.architecture
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Body {
    EncDec(EncoderDecoder),
    Fcn(Fcn),
    Vgg(Vgg),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    spec: ArchSpec,
    task: Task,
    params: ParamStore,
    body: Body,
    head_act: Option<Activation>,
}

fn builder_run<T>(seed: u64, f: impl FnOnce(&mut Builder) -> Result<T>) -> Result<(T, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let body = f(&mut Builder { store: &mut store, rng: &mut rng })?;
    Ok((body, store))
}

/// UNet, or ResUNet when `residual` is set.
pub fn build_unet(spec: &ArchSpec, residual: bool, seed: u64) -> Result<ModelGraph> {
    spec.validate(Task::Segmentation)?;
    let kind = if residual { BlockKind::Residual } else { BlockKind::Plain };
    let (body, params) = builder_run(seed, |b| {
        EncoderDecoder::new(b, kind, spec.dims, spec.in_channels, spec.classes, spec.base_filters, spec.depth)
    })?;
    Ok(ModelGraph::seg(spec, params, Body::EncDec(body)))
}

pub fn build_uinc(spec: &ArchSpec, seed: u64) -> Result<ModelGraph> {
    spec.validate(Task::Segmentation)?;
    let (body, params) = builder_run(seed, |b| {
        EncoderDecoder::new(b, BlockKind::Inception, spec.dims, spec.in_channels, spec.classes, spec.base_filters, spec.depth)
    })?;
    Ok(ModelGraph::seg(spec, params, Body::EncDec(body)))
}

pub fn build_fcn(spec: &ArchSpec, seed: u64) -> Result<ModelGraph> {
    spec.validate(Task::Segmentation)?;
    let (body, params) = builder_run(seed, |b| {
        Fcn::new(b, spec.dims, spec.in_channels, spec.classes, spec.base_filters, spec.depth)
    })?;
    Ok(ModelGraph::seg(spec, params, Body::Fcn(body)))
}

/// VGG feature stages, global average pooling and a three-layer dense head.
/// Classification heads end in softmax; regression heads use the spec's
/// final activation (normally none).
pub fn build_vgg(spec: &ArchSpec, task: Task, seed: u64) -> Result<ModelGraph> {
    spec.validate(task)?;
    if !spec.architecture.is_vgg() {
        return Err(Error::config(format!("{} is not a vgg variant", spec.architecture)));
    }
    let head_act = match task {
        Task::Classification => Some(Activation::Softmax(1)),
        _ => spec.final_activation.activation(),
    };
    let (body, params) = builder_run(seed, |b| {
        Vgg::new(b, spec.architecture, spec.dims, spec.in_channels, spec.classes, spec.base_filters, spec.batch_norm, head_act)
    })?;
    Ok(ModelGraph { spec: spec.clone(), task, params, body: Body::Vgg(body), head_act: None })
}

/// Dispatch on the spec's architecture.
pub fn build(spec: &ArchSpec, task: Task, seed: u64) -> Result<ModelGraph> {
    match spec.architecture {
        Architecture::Unet => build_unet(spec, false, seed),
        Architecture::ResUnet => build_unet(spec, true, seed),
        Architecture::Uinc => build_uinc(spec, seed),
        Architecture::Fcn => build_fcn(spec, seed),
        _ => build_vgg(spec, task, seed),
    }
}

impl ModelGraph {
    fn seg(spec: &ArchSpec, params: ParamStore, body: Body) -> Self {
        Self {
            spec: spec.clone(),
            task: Task::Segmentation,
            params,
            body,
            head_act: spec.final_activation.activation(),
        }
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.spec.dims + 2 {
            return Err(Error::dim(
                0,
                format!("expected a [B, C, {}D spatial] batch, got {:?}", self.spec.dims, shape),
            ));
        }
        if shape[1] != self.spec.in_channels {
            return Err(Error::dim(
                1,
                format!("batch has {} channels, model expects {}", shape[1], self.spec.in_channels),
            ));
        }
        self.spec.check_patch(&shape[2..])
    }

    fn run(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.check_input(ctx.tape.value(x).shape())?;
        let out = match &self.body {
            Body::EncDec(n) => n.forward(ctx, x)?,
            Body::Fcn(n) => n.forward(ctx, x)?,
            Body::Vgg(n) => n.forward(ctx, x)?,
        };
        match self.head_act {
            Some(a) => ctx.tape.activation(out, a),
            None => Ok(out),
        }
    }

    /// Inference-mode forward pass recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut ctx = Ctx { tape, params: &self.params, training: false, stat_updates: Vec::new() };
        self.run(&mut ctx, x)
    }

    /// Training-mode forward pass: batch norm uses batch statistics and
    /// updates its running estimates.
    pub fn forward_train(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut ctx = Ctx { tape, params: &self.params, training: true, stat_updates: Vec::new() };
        let out = self.run(&mut ctx, x)?;
        let updates = core::mem::take(&mut ctx.stat_updates);
        for (id, value) in updates {
            self.params.set_value(id, value)?;
        }
        Ok(out)
    }

    /// Forward a batch without keeping the tape.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Output shape for an input batch shape.
    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        match self.task {
            Task::Segmentation => {
                let mut s = input.to_vec();
                s[1] = self.spec.classes;
                s
            }
            _ => vec![input[0], self.spec.classes],
        }
    }

    /// Names of all parameters, in registration order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.entries().iter().map(|e| e.name.clone()).collect()
    }

    /// Number of convolution and dense weight tensors.
    pub fn layer_tally(&self) -> (usize, usize) {
        let mut conv = 0;
        let mut dense = 0;
        for e in self.params.entries() {
            if e.name.ends_with(".weight") {
                if e.value.ndim() == 2 {
                    dense += 1;
                } else {
                    conv += 1;
                }
            }
        }
        (conv, dense)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Real;

    fn spec(arch: Architecture) -> ArchSpec {
        ArchSpec {
            architecture: arch,
            dims: 2,
            in_channels: 1,
            classes: 2,
            base_filters: 4,
            depth: 3,
            final_activation: FinalActivation::Softmax,
            batch_norm: false,
        }
    }

    fn gaussian(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.normal(0.0, 1.0) as Real)
    }

    #[test]
    fn segmentation_shapes() {
        let x = gaussian(&[2, 1, 32, 32], 1);
        for arch in [Architecture::Unet, Architecture::ResUnet, Architecture::Uinc, Architecture::Fcn] {
            let m = build(&spec(arch), Task::Segmentation, 3).unwrap();
            let y = m.predict(&x).unwrap();
            assert_eq!(y.shape(), &[2, 2, 32, 32], "{arch}");
            assert!(y.is_finite());
        }
    }

    #[test]
    fn vgg_regression_shape() {
        let mut s = spec(Architecture::Vgg11);
        s.classes = 1;
        s.final_activation = FinalActivation::None;
        let m = build(&s, Task::Regression, 3).unwrap();
        let y = m.predict(&gaussian(&[2, 1, 32, 32], 2)).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
    }

    #[test]
    fn vgg_rejects_segmentation() {
        assert!(matches!(build(&spec(Architecture::Vgg16), Task::Segmentation, 0), Err(Error::Config(_))));
    }

    #[test]
    fn indivisible_patch_names_divisor() {
        let m = build(&spec(Architecture::Unet), Task::Segmentation, 0).unwrap();
        match m.predict(&gaussian(&[1, 1, 30, 32], 0)) {
            Err(Error::Config(msg)) => assert!(msg.contains("divisible by 4"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(m.predict(&gaussian(&[1, 2, 32, 32], 0)), Err(Error::Dimension { axis: 1, .. })));
    }
}
