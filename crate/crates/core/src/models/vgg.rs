use alloc::{format, vec, vec::Vec};

use super::layers::{Builder, ConvUnit, Ctx, Dense};
use super::Architecture;
use crate::kernels::activation::Activation;
use crate::{Result, Var};

/// Canonical VGG stage layout: `Some(filters)` is a 3x3 convolution at the
/// canonical width, `None` a 2x2 max pool.
pub fn vgg_layout(arch: Architecture) -> &'static [Option<usize>] {
    const M: Option<usize> = None;
    match arch {
        Architecture::Vgg11 => &[Some(64), M, Some(128), M, Some(256), Some(256), M, Some(512), Some(512), M, Some(512), Some(512), M],
        Architecture::Vgg13 => &[Some(64), Some(64), M, Some(128), Some(128), M, Some(256), Some(256), M, Some(512), Some(512), M, Some(512), Some(512), M],
        Architecture::Vgg16 => &[Some(64), Some(64), M, Some(128), Some(128), M, Some(256), Some(256), Some(256), M, Some(512), Some(512), Some(512), M, Some(512), Some(512), Some(512), M],
        Architecture::Vgg19 => &[Some(64), Some(64), M, Some(128), Some(128), M, Some(256), Some(256), Some(256), Some(256), M, Some(512), Some(512), Some(512), Some(512), M, Some(512), Some(512), Some(512), Some(512), M],
        _ => &[],
    }
}

/// Canonical widths scaled so that `base_filters = 64` reproduces them.
pub fn scaled_width(canonical: usize, base: usize) -> usize {
    (canonical * base / 64).max(1)
}

#[derive(Clone, Debug)]
pub(crate) enum VggItem {
    Conv(ConvUnit),
    Pool,
}

#[derive(Clone, Debug)]
pub(crate) struct Vgg {
    pub features: Vec<VggItem>,
    pub fc: [Dense; 3],
    pub dims: usize,
    pub head_act: Option<Activation>,
}

impl Vgg {
    pub fn new(
        b: &mut Builder,
        arch: Architecture,
        dims: usize,
        cin: usize,
        classes: usize,
        base: usize,
        batch_norm: bool,
        head_act: Option<Activation>,
    ) -> Result<Self> {
        let mut features = Vec::new();
        let mut c = cin;
        let mut conv_i = 0;
        for item in vgg_layout(arch) {
            match item {
                Some(w) => {
                    let out = scaled_width(*w, base);
                    let name = format!("features{conv_i}");
                    let unit = if batch_norm {
                        b.unit(&name, c, out, 3, dims, true, Some(Activation::Relu))?
                    } else {
                        ConvUnit {
                            conv: b.conv(&format!("{name}.conv"), c, out, 3, dims, true)?,
                            norm: None,
                            act: Some(Activation::Relu),
                        }
                    };
                    features.push(VggItem::Conv(unit));
                    c = out;
                    conv_i += 1;
                }
                None => features.push(VggItem::Pool),
            }
        }
        let hidden = scaled_width(4096, base);
        let fc = [
            b.dense("fc0", c, hidden)?,
            b.dense("fc1", hidden, hidden)?,
            b.dense("fc2", hidden, classes)?,
        ];
        Ok(Self { features, fc, dims, head_act })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let two = vec![2; self.dims];
        let mut h = x;
        for item in &self.features {
            h = match item {
                VggItem::Conv(u) => u.forward(ctx, h)?,
                VggItem::Pool => ctx.tape.max_pool(h, &two, &two)?,
            };
        }
        h = ctx.tape.global_avg_pool(h)?;
        let shape = ctx.tape.value(h).shape();
        let flat = [shape[0], shape[1]];
        h = ctx.tape.reshape(h, &flat)?;
        h = self.fc[0].forward(ctx, h)?;
        h = ctx.tape.activation(h, Activation::Relu)?;
        h = self.fc[1].forward(ctx, h)?;
        h = ctx.tape.activation(h, Activation::Relu)?;
        h = self.fc[2].forward(ctx, h)?;
        match self.head_act {
            Some(a) => ctx.tape.activation(h, a),
            None => Ok(h),
        }
    }

    pub fn pool_count(arch: Architecture) -> usize {
        vgg_layout(arch).iter().filter(|i| i.is_none()).count()
    }
}
