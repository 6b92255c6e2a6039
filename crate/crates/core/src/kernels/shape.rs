//! Parameter-free structural operators.

use alloc::{format, vec, vec::Vec};

use crate::tensor::{pad3, spatial3};
use crate::{Error, Result, Tensor};

/// Concatenate `[B, Ci, S...]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
    let (bsz, spatial) = (first.shape()[0], &first.shape()[2..]);
    for p in parts {
        if p.shape()[0] != bsz {
            return Err(Error::dim(0, format!("concat batch {:?} vs {:?}", first.shape(), p.shape())));
        }
        if &p.shape()[2..] != spatial {
            let axis = 2 + p.shape()[2..].iter().zip(spatial).position(|(a, b)| a != b).unwrap_or(0);
            return Err(Error::dim(axis, format!("concat {:?} with {:?}", first.shape(), p.shape())));
        }
    }
    let vol: usize = spatial.iter().product();
    let channels: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    let mut data = Vec::with_capacity(bsz * channels * vol);
    for n in 0..bsz {
        for p in parts {
            let c = p.shape()[1];
            data.extend_from_slice(&p.data()[n * c * vol..(n + 1) * c * vol]);
        }
    }
    Tensor::new(&shape, data)
}

pub fn concat_channels_backward(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let bsz = grad.shape()[0];
    let vol: usize = grad.shape()[2..].iter().product();
    let total: usize = channels.iter().sum();
    let mut offset = 0;
    let mut out = Vec::with_capacity(channels.len());
    for &c in channels {
        let mut shape = grad.shape().to_vec();
        shape[1] = c;
        let mut data = Vec::with_capacity(bsz * c * vol);
        for n in 0..bsz {
            let base = (n * total + offset) * vol;
            data.extend_from_slice(&grad.data()[base..base + c * vol]);
        }
        out.push(Tensor::new(&shape, data).expect("split shape"));
        offset += c;
    }
    out
}

/// Nearest-neighbour upsampling by an integer factor per spatial axis.
pub fn upsample_nearest(x: &Tensor, factor: &[usize]) -> Result<Tensor> {
    let dims = x.ndim() - 2;
    if factor.len() != dims || factor.contains(&0) {
        return Err(Error::config(format!("upsample factor {:?} for {}D input", factor, dims)));
    }
    let [d, h, w] = spatial3(x.shape());
    let [fd, fh, fw] = pad3(factor, 1);
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let planes = x.shape()[0] * x.shape()[1];
    let mut shape = vec![x.shape()[0], x.shape()[1]];
    shape.extend_from_slice(&[od, oh, ow][3 - dims..]);
    let mut out = Tensor::zeros(&shape);
    let (iv, ov) = (d * h * w, od * oh * ow);
    for p in 0..planes {
        let src = &x.data()[p * iv..(p + 1) * iv];
        let dst = &mut out.data_mut()[p * ov..(p + 1) * ov];
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    dst[(z * oh + y) * ow + xx] = src[((z / fd) * h + y / fh) * w + xx / fw];
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample_nearest_backward(x_shape: &[usize], factor: &[usize], grad: &Tensor) -> Tensor {
    let [d, h, w] = spatial3(x_shape);
    let [fd, fh, fw] = pad3(factor, 1);
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let planes = x_shape[0] * x_shape[1];
    let mut dx = Tensor::zeros(x_shape);
    let (iv, ov) = (d * h * w, od * oh * ow);
    for p in 0..planes {
        let src = &grad.data()[p * ov..(p + 1) * ov];
        let dst = &mut dx.data_mut()[p * iv..(p + 1) * iv];
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    dst[((z / fd) * h + y / fh) * w + xx / fw] += src[(z * oh + y) * ow + xx];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split() {
        let a = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64 as crate::Real);
        let b = Tensor::from_fn(&[2, 3, 2, 2], |i| 100.0 + i as crate::Real);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let parts = concat_channels_backward(&c, &[1, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn upsample_repeats() {
        let x = Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = upsample_nearest(&x, &[2, 2]).unwrap();
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }
}
