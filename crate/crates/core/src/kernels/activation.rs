use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(Real),
    Sigmoid,
    /// Softmax along the given axis.
    Softmax(usize),
}

fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `(outer, axis extent, inner)` decomposition for reductions along `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn activation_forward(x: &Tensor, kind: Activation) -> Result<Tensor> {
    Ok(match kind {
        Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::LeakyRelu(a) => x.map(|v| if v > 0.0 { v } else { a * v }),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax(axis) => {
            if axis >= x.ndim() {
                return Err(Error::dim(axis, format!("softmax axis out of range for {:?}", x.shape())));
            }
            let (outer, n, inner) = split_axis(x.shape(), axis);
            let mut y = x.clone();
            let d = y.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let m = (0..n).map(|k| d[at(k)]).fold(Real::NEG_INFINITY, Real::max);
                    let mut s = 0.0;
                    for k in 0..n {
                        let e = (d[at(k)] - m).exp();
                        d[at(k)] = e;
                        s += e;
                    }
                    for k in 0..n {
                        d[at(k)] /= s;
                    }
                }
            }
            y
        }
    })
}

/// Gradient w.r.t. the input given the forward input `x`, output `y` and
/// upstream gradient `gy`.
pub fn activation_backward(x: &Tensor, y: &Tensor, gy: &Tensor, kind: Activation) -> Tensor {
    let mut dx = gy.clone();
    match kind {
        Activation::Relu => {
            for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::LeakyRelu(a) => {
            for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                if v <= 0.0 {
                    *d *= a;
                }
            }
        }
        Activation::Sigmoid => {
            for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                *d *= s * (1.0 - s);
            }
        }
        Activation::Softmax(axis) => {
            let (outer, n, inner) = split_axis(y.shape(), axis);
            let (yd, gd) = (y.data(), gy.data());
            let d = dx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: Real = (0..n).map(|k| yd[at(k)] * gd[at(k)]).sum();
                    for k in 0..n {
                        d[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn relu_values() {
        let x = Tensor::new(&[2], vec![-2.0, 3.0]).unwrap();
        let y = activation_forward(&x, Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0]);
    }

    #[test]
    fn softmax_constant_is_uniform() {
        let x = Tensor::full(&[1, 5], 3.0);
        let y = activation_forward(&x, Activation::Softmax(1)).unwrap();
        for v in y.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_bad_axis() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(activation_forward(&x, Activation::Softmax(2)).is_err());
    }

    #[test]
    fn sigmoid_derivative_closed_form() {
        let x = Tensor::new(&[3], vec![-1.5, 0.0, 2.0]).unwrap();
        let y = activation_forward(&x, Activation::Sigmoid).unwrap();
        let g = activation_backward(&x, &y, &Tensor::full(&[3], 1.0), Activation::Sigmoid);
        for i in 0..3 {
            let s = 1.0 / (1.0 + (-x.data()[i]).exp());
            assert!((g.data()[i] - s * (1.0 - s)).abs() < 1e-15);
        }
    }
}
