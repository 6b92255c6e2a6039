//! Encoder-decoder segmentation networks: UNet, ResUNet, Inception UNet and
//! the decoder-free FCN.

use alloc::{format, vec, vec::Vec};

use super::layers::{Builder, Conv, ConvUnit, Ctx, Up};
use crate::kernels::activation::Activation;
use crate::{Error, Result, Var};

pub(crate) const LEAKY: Activation = Activation::LeakyRelu(0.01);

/// Channel split of an inception block: `(1x1, 3x3, 5x5)` paths. The 1x1 and
/// 5x5 paths get `floor(out / 3)` each and the 3x3 path takes the rest.
pub fn inception_split(out: usize) -> Result<(usize, usize, usize)> {
    if out < 3 {
        return Err(Error::config(format!(
            "inception blocks need at least 3 output channels, got {out} (raise base_filters)"
        )));
    }
    let side = out / 3;
    Ok((side, out - 2 * side, side))
}

#[derive(Clone, Debug)]
pub(crate) enum Block {
    Plain([ConvUnit; 2]),
    /// Second unit has no activation; it is applied after the identity sum.
    Residual { units: [ConvUnit; 2], proj: Option<Conv> },
    Inception(Vec<ConvUnit>),
}

impl Block {
    pub fn new(b: &mut Builder, name: &str, kind: BlockKind, cin: usize, cout: usize, dims: usize) -> Result<Self> {
        Ok(match kind {
            BlockKind::Plain => Block::Plain([
                b.unit(&format!("{name}.unit0"), cin, cout, 3, dims, false, Some(LEAKY))?,
                b.unit(&format!("{name}.unit1"), cout, cout, 3, dims, false, Some(LEAKY))?,
            ]),
            BlockKind::Residual => {
                let units = [
                    b.unit(&format!("{name}.unit0"), cin, cout, 3, dims, false, Some(LEAKY))?,
                    b.unit(&format!("{name}.unit1"), cout, cout, 3, dims, false, None)?,
                ];
                let proj = if cin != cout {
                    Some(b.conv(&format!("{name}.proj"), cin, cout, 1, dims, false)?)
                } else {
                    None
                };
                Block::Residual { units, proj }
            }
            BlockKind::Inception => {
                let (p1, p3, p5) = inception_split(cout)?;
                Block::Inception(vec![
                    b.unit(&format!("{name}.path1"), cin, p1, 1, dims, false, Some(LEAKY))?,
                    b.unit(&format!("{name}.path3"), cin, p3, 3, dims, false, Some(LEAKY))?,
                    b.unit(&format!("{name}.path5"), cin, p5, 5, dims, false, Some(LEAKY))?,
                ])
            }
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Block::Plain([a, b]) => {
                let h = a.forward(ctx, x)?;
                b.forward(ctx, h)
            }
            Block::Residual { units: [a, b], proj } => {
                let h = a.forward(ctx, x)?;
                let h = b.forward(ctx, h)?;
                let skip = match proj {
                    Some(p) => p.forward(ctx, x)?,
                    None => x,
                };
                let s = ctx.tape.add(h, skip)?;
                ctx.tape.activation(s, LEAKY)
            }
            Block::Inception(paths) => {
                let outs = paths.iter().map(|p| p.forward(ctx, x)).collect::<Result<Vec<_>>>()?;
                ctx.tape.concat(&outs)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BlockKind {
    Plain,
    Residual,
    Inception,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderDecoder {
    pub encoder: Vec<Block>,
    pub ups: Vec<Up>,
    pub decoder: Vec<Block>,
    pub head: Conv,
    pub dims: usize,
}

impl EncoderDecoder {
    pub fn new(b: &mut Builder, kind: BlockKind, dims: usize, cin: usize, classes: usize, base: usize, depth: usize) -> Result<Self> {
        let f = |l: usize| base << l;
        let mut encoder = Vec::with_capacity(depth);
        let mut c = cin;
        for l in 0..depth {
            encoder.push(Block::new(b, &format!("enc{l}"), kind, c, f(l), dims)?);
            c = f(l);
        }
        let mut ups = Vec::with_capacity(depth - 1);
        let mut decoder = Vec::with_capacity(depth - 1);
        for l in 0..depth - 1 {
            ups.push(b.up(&format!("up{l}"), f(l + 1), f(l), dims)?);
            decoder.push(Block::new(b, &format!("dec{l}"), kind, 2 * f(l), f(l), dims)?);
        }
        let head = b.conv("head", f(0), classes, 1, dims, true)?;
        Ok(Self { encoder, ups, decoder, head, dims })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let depth = self.encoder.len();
        let two = vec![2; self.dims];
        let mut skips = Vec::with_capacity(depth);
        let mut h = x;
        for (l, block) in self.encoder.iter().enumerate() {
            h = block.forward(ctx, h)?;
            if l + 1 < depth {
                skips.push(h);
                h = ctx.tape.max_pool(h, &two, &two)?;
            }
        }
        for l in (0..depth - 1).rev() {
            let up = self.ups[l].forward(ctx, h)?;
            let cat = ctx.tape.concat(&[up, skips[l]])?;
            h = self.decoder[l].forward(ctx, cat)?;
        }
        self.head.forward(ctx, h)
    }
}

/// Encoder only; every level is upsampled to full resolution, the maps are
/// concatenated and a 1x1 convolution classifies each voxel.
#[derive(Clone, Debug)]
pub(crate) struct Fcn {
    pub encoder: Vec<Block>,
    pub head: Conv,
    pub dims: usize,
}

impl Fcn {
    pub fn new(b: &mut Builder, dims: usize, cin: usize, classes: usize, base: usize, depth: usize) -> Result<Self> {
        let mut encoder = Vec::with_capacity(depth);
        let mut c = cin;
        let mut fused = 0;
        for l in 0..depth {
            let f = base << l;
            encoder.push(Block::new(b, &format!("enc{l}"), BlockKind::Plain, c, f, dims)?);
            c = f;
            fused += f;
        }
        let head = b.conv("head", fused, classes, 1, dims, true)?;
        Ok(Self { encoder, head, dims })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let depth = self.encoder.len();
        let two = vec![2; self.dims];
        let mut levels = Vec::with_capacity(depth);
        let mut h = x;
        for (l, block) in self.encoder.iter().enumerate() {
            h = block.forward(ctx, h)?;
            levels.push(if l == 0 { h } else { ctx.tape.upsample(h, &vec![1 << l; self.dims])? });
            if l + 1 < depth {
                h = ctx.tape.max_pool(h, &two, &two)?;
            }
        }
        let cat = ctx.tape.concat(&levels)?;
        self.head.forward(ctx, cat)
    }
}
