use alloc::{format, vec, vec::Vec};

use super::conv::ConvGeom;
use crate::tensor::{pad3, spatial3};
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Average,
    GlobalAverage,
}

fn pool_geom(x: &Tensor, window: &[usize], stride: &[usize]) -> Result<ConvGeom> {
    let dims = x.ndim().saturating_sub(2);
    if !(dims == 2 || dims == 3) || window.len() != dims || stride.len() != dims {
        return Err(Error::dim(
            0,
            format!("pooling {:?} with window {:?} / stride {:?}", x.shape(), window, stride),
        ));
    }
    let sp = spatial3(x.shape());
    let win = pad3(window, 1);
    for i in 0..3 {
        if win[i] > sp[i] {
            let axis = 2 + i - (3 - dims);
            return Err(Error::dim(
                axis,
                format!("pool window {} larger than extent {}", win[i], sp[i]),
            ));
        }
    }
    ConvGeom::new(sp, win, pad3(stride, 1), [0; 3], 2)
}

fn out_shape(x: &Tensor, g: &ConvGeom) -> Vec<usize> {
    let dims = x.ndim() - 2;
    let mut s = vec![x.shape()[0], x.shape()[1]];
    s.extend_from_slice(&g.output[3 - dims..]);
    s
}

/// Max pooling; also returns, per output element, the flat input index of
/// the maximum (first occurrence wins).
pub fn max_pool(x: &Tensor, window: &[usize], stride: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let g = pool_geom(x, window, stride)?;
    let planes = x.shape()[0] * x.shape()[1];
    let (iv, ov) = (g.in_vol(), g.out_vol());
    let [_, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let mut out = Tensor::zeros(&out_shape(x, &g));
    let mut arg = vec![0usize; planes * ov];
    for p in 0..planes {
        let src = &x.data()[p * iv..(p + 1) * iv];
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = Real::NEG_INFINITY;
                    let mut best_i = 0;
                    for a in 0..g.kernel[0] {
                        for b in 0..g.kernel[1] {
                            let row = ((z * g.stride[0] + a) * ih + y * g.stride[1] + b) * iw;
                            for e in 0..g.kernel[2] {
                                let i = row + xo * g.stride[2] + e;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = p * ov + (z * oh + y) * ow + xo;
                    out.data_mut()[o] = best;
                    arg[o] = p * iv + best_i;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

fn avg_visit(g: &ConvGeom, mut f: impl FnMut(usize, usize)) {
    let [_, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    for z in 0..od {
        for y in 0..oh {
            for xo in 0..ow {
                let o = (z * oh + y) * ow + xo;
                for a in 0..g.kernel[0] {
                    for b in 0..g.kernel[1] {
                        let row = ((z * g.stride[0] + a) * ih + y * g.stride[1] + b) * iw;
                        for e in 0..g.kernel[2] {
                            f(o, row + xo * g.stride[2] + e);
                        }
                    }
                }
            }
        }
    }
}

pub fn avg_pool(x: &Tensor, window: &[usize], stride: &[usize]) -> Result<Tensor> {
    let g = pool_geom(x, window, stride)?;
    let planes = x.shape()[0] * x.shape()[1];
    let (iv, ov) = (g.in_vol(), g.out_vol());
    let inv = 1.0 / g.k_vol() as Real;
    let mut out = Tensor::zeros(&out_shape(x, &g));
    for p in 0..planes {
        let src = &x.data()[p * iv..(p + 1) * iv];
        let dst = &mut out.data_mut()[p * ov..(p + 1) * ov];
        avg_visit(&g, |o, i| dst[o] += src[i] * inv);
    }
    Ok(out)
}

pub fn avg_pool_backward(
    x_shape: &[usize],
    window: &[usize],
    stride: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    let probe = Tensor::zeros(x_shape);
    let g = pool_geom(&probe, window, stride)?;
    let planes = x_shape[0] * x_shape[1];
    let (iv, ov) = (g.in_vol(), g.out_vol());
    let inv = 1.0 / g.k_vol() as Real;
    let mut dx = probe;
    for p in 0..planes {
        let go = &grad_out.data()[p * ov..(p + 1) * ov];
        let dst = &mut dx.data_mut()[p * iv..(p + 1) * iv];
        avg_visit(&g, |o, i| dst[i] += go[o] * inv);
    }
    Ok(dx)
}

/// Mean over all spatial axes; the output keeps them with extent 1.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    if x.ndim() < 3 {
        return Err(Error::dim(0, format!("global pooling needs spatial axes, got {:?}", x.shape())));
    }
    let planes = x.shape()[0] * x.shape()[1];
    let vol = x.len() / planes;
    let mut shape = x.shape().to_vec();
    shape[2..].iter_mut().for_each(|e| *e = 1);
    let data = x.data().chunks(vol).map(|c| c.iter().sum::<Real>() / vol as Real).collect();
    Tensor::new(&shape, data)
}

pub fn global_avg_pool_backward(x_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let planes = x_shape[0] * x_shape[1];
    let n: usize = x_shape.iter().product();
    let vol = n / planes;
    let inv = 1.0 / vol as Real;
    let mut dx = Tensor::zeros(x_shape);
    for (p, chunk) in dx.data_mut().chunks_mut(vol).enumerate() {
        let g = grad_out.data()[p] * inv;
        chunk.iter_mut().for_each(|v| *v = g);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_2x2() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool(&x, &[2, 2], &[2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn global_average_of_constant() {
        let x = Tensor::full(&[2, 3, 4, 5], 2.5);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn window_larger_than_input() {
        let x = Tensor::zeros(&[1, 1, 1, 4]);
        assert!(matches!(
            max_pool(&x, &[2, 2], &[2, 2]),
            Err(Error::Dimension { axis: 2, .. })
        ));
    }

    #[test]
    fn average_pool_values() {
        let x = Tensor::new(&[1, 1, 2, 4], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let y = avg_pool(&x, &[2, 2], &[2, 2]).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5]);
    }
}
