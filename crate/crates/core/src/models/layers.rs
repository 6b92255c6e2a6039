use alloc::{format, string::String, vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::kernels::activation::Activation;
use crate::{ParamId, ParamStore, Real, Result, Rng, Tape, Tensor, Var};

/// Forward-pass context shared by all layers.
pub(crate) struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a ParamStore,
    pub training: bool,
    /// Running-statistic updates produced by batch norm in training mode.
    pub stat_updates: Vec<(ParamId, Tensor)>,
}

impl Ctx<'_> {
    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }
}

/// Registers parameters with deterministic Kaiming-uniform initialisation.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut Rng,
}

impl Builder<'_> {
    fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.range(-bound, bound) as Real);
        self.store.add(name, t, true)
    }

    fn filled(&mut self, name: String, shape: &[usize], value: Real, trainable: bool) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, value), trainable)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, dims: usize, bias: bool) -> Result<Conv> {
        let mut shape = vec![cout, cin];
        shape.extend(core::iter::repeat_n(k, dims));
        let w = self.kaiming(format!("{name}.weight"), &shape, cin * k.pow(dims as u32))?;
        let b = if bias { Some(self.filled(format!("{name}.bias"), &[cout], 0.0, true)?) } else { None };
        Ok(Conv { w, b, stride: vec![1; dims], pad: vec![k / 2; dims] })
    }

    /// Transposed convolution with kernel = stride = 2.
    pub fn up(&mut self, name: &str, cin: usize, cout: usize, dims: usize) -> Result<Up> {
        let mut shape = vec![cin, cout];
        shape.extend(core::iter::repeat_n(2, dims));
        // Each output voxel receives exactly one tap per input channel.
        let w = self.kaiming(format!("{name}.weight"), &shape, cin)?;
        let b = self.filled(format!("{name}.bias"), &[cout], 0.0, true)?;
        Ok(Up { w, b, stride: vec![2; dims] })
    }

    pub fn dense(&mut self, name: &str, fin: usize, fout: usize) -> Result<Dense> {
        let w = self.kaiming(format!("{name}.weight"), &[fin, fout], fin)?;
        let b = self.filled(format!("{name}.bias"), &[fout], 0.0, true)?;
        Ok(Dense { w, b })
    }

    pub fn norm(&mut self, name: &str, c: usize, batch: bool) -> Result<Norm> {
        let gamma = self.filled(format!("{name}.gamma"), &[c], 1.0, true)?;
        let beta = self.filled(format!("{name}.beta"), &[c], 0.0, true)?;
        let running = if batch {
            Some((
                self.filled(format!("{name}.running_mean"), &[c], 0.0, false)?,
                self.filled(format!("{name}.running_var"), &[c], 1.0, false)?,
            ))
        } else {
            None
        };
        Ok(Norm { gamma, beta, running })
    }

    /// Convolution (no bias) + normalisation + activation.
    pub fn unit(&mut self, name: &str, cin: usize, cout: usize, k: usize, dims: usize, batch_norm: bool, act: Option<Activation>) -> Result<ConvUnit> {
        let conv = self.conv(&format!("{name}.conv"), cin, cout, k, dims, false)?;
        let norm = self.norm(&format!("{name}.norm"), cout, batch_norm)?;
        Ok(ConvUnit { conv, norm: Some(norm), act })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: Vec<usize>,
    pub pad: Vec<usize>,
}

impl Conv {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.p(self.w);
        let b = self.b.map(|b| ctx.p(b));
        ctx.tape.conv(x, w, b, &self.stride, &self.pad)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Up {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: Vec<usize>,
}

impl Up {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        ctx.tape.transpose_conv(x, w, Some(b), &self.stride)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        ctx.tape.dense(x, w, b)
    }
}

const BN_MOMENTUM: Real = 0.1;

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// `(running_mean, running_var)` for batch norm; `None` means instance norm.
    pub running: Option<(ParamId, ParamId)>,
}

impl Norm {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        match self.running {
            None => Ok(ctx.tape.norm(x, g, b, true)?.0),
            Some((rm, rv)) if ctx.training => {
                let shape = ctx.tape.value(x).shape().to_vec();
                let count: usize = shape[0] * shape[2..].iter().product::<usize>();
                let (y, mean, var) = ctx.tape.norm(x, g, b, false)?;
                let unbias = if count > 1 { count as Real / (count - 1) as Real } else { 1.0 };
                let old_m = ctx.params.value(rm);
                let old_v = ctx.params.value(rv);
                let new_m = Tensor::from_fn(old_m.shape(), |c| {
                    (1.0 - BN_MOMENTUM) * old_m.data()[c] + BN_MOMENTUM * mean[c]
                });
                let new_v = Tensor::from_fn(old_v.shape(), |c| {
                    (1.0 - BN_MOMENTUM) * old_v.data()[c] + BN_MOMENTUM * var[c] * unbias
                });
                ctx.stat_updates.push((rm, new_m));
                ctx.stat_updates.push((rv, new_v));
                Ok(y)
            }
            Some((rm, rv)) => {
                let (m, v) = (ctx.params.value(rm).clone(), ctx.params.value(rv).clone());
                ctx.tape.frozen_batch_norm(x, g, b, &m, &v)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvUnit {
    pub conv: Conv,
    pub norm: Option<Norm>,
    pub act: Option<Activation>,
}

impl ConvUnit {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = self.conv.forward(ctx, x)?;
        if let Some(n) = &self.norm {
            h = n.forward(ctx, h)?;
        }
        if let Some(a) = self.act {
            h = ctx.tape.activation(h, a)?;
        }
        Ok(h)
    }
}
