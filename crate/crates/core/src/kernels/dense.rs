use alloc::format;

use crate::gemm::gemm;
use crate::{Error, Result, Tensor};

/// `x: [B, F] · w: [F, O] + b: [O]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 || w.ndim() != 2 {
        return Err(Error::dim(0, format!("dense expects 2D operands, got {:?} and {:?}", x.shape(), w.shape())));
    }
    let (bsz, f, o) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    if w.shape()[0] != f {
        return Err(Error::dim(1, format!("input has {} features, weights expect {}", f, w.shape()[0])));
    }
    if b.len() != o {
        return Err(Error::dim(0, format!("bias has {} entries for {} outputs", b.len(), o)));
    }
    let mut y = Tensor::zeros(&[bsz, o]);
    for row in y.data_mut().chunks_mut(o) {
        row.copy_from_slice(b.data());
    }
    gemm(bsz, f, o, x.data(), false, w.data(), false, 1.0, y.data_mut());
    Ok(y)
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, w: &Tensor, gy: &Tensor) -> DenseGrads {
    let (bsz, f, o) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[o]);
    gemm(bsz, o, f, gy.data(), false, w.data(), true, 0.0, dx.data_mut());
    gemm(f, bsz, o, x.data(), true, gy.data(), false, 0.0, dw.data_mut());
    for row in gy.data().chunks(o) {
        for (d, g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    DenseGrads { input: dx, weight: dw, bias: db }
}
