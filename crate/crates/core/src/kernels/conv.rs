use alloc::{format, vec, vec::Vec};

use crate::gemm::gemm;
use crate::tensor::{pad3, spatial3};
use crate::{Error, Real, Result, Tensor};

/// Sliding-window geometry over three spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// `axis_base` is added to the reported axis so errors name the tensor
    /// axis (2 for the first spatial axis of a 2D batch).
    pub fn new(
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        axis_base: usize,
    ) -> Result<Self> {
        let mut output = [1; 3];
        for i in 0..3 {
            let axis = axis_base + i;
            if stride[i] == 0 {
                return Err(Error::dim(axis, "stride must be at least 1"));
            }
            let padded = input[i] + 2 * pad[i];
            if kernel[i] == 0 || kernel[i] > padded {
                return Err(Error::dim(
                    axis,
                    format!("kernel {} does not fit padded extent {}", kernel[i], padded),
                ));
            }
            output[i] = (padded - kernel[i]) / stride[i] + 1;
        }
        Ok(Self { input, output, kernel, stride, pad })
    }

    pub fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    pub fn k_vol(&self) -> usize {
        self.kernel.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// Output indices `o` in `[lo, hi)` for which `o * s + k - p` lands in `[0, n)`.
fn valid_range(out: usize, s: usize, k: usize, p: usize, n: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if n + p > k { ((n - 1 + p - k) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold one sample `[C, D, H, W]` into `[C * kvol, out_vol]` columns.
pub(crate) fn im2col(x: &[Real], channels: usize, g: &ConvGeom, cols: &mut [Real]) {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ov = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            let (dlo, dhi) = valid_range(od, sd, a, pd, id);
            for b in 0..kh {
                let (hlo, hhi) = valid_range(oh, sh, b, ph, ih);
                for e in 0..kw {
                    let (wlo, whi) = valid_range(ow, sw, e, pw, iw);
                    let dst = &mut cols[row * ov..(row + 1) * ov];
                    dst.fill(0.0);
                    for z in dlo..dhi {
                        let zi = z * sd + a - pd;
                        for y in hlo..hhi {
                            let yi = y * sh + b - ph;
                            let src = &xc[(zi * ih + yi) * iw..];
                            let d = &mut dst[(z * oh + y) * ow..];
                            if sw == 1 {
                                let off = e as isize - pw as isize;
                                for x_ in wlo..whi {
                                    d[x_] = src[(x_ as isize + off) as usize];
                                }
                            } else {
                                for x_ in wlo..whi {
                                    d[x_] = src[x_ * sw + e - pw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C, D, H, W]`.
pub(crate) fn col2im(cols: &[Real], channels: usize, g: &ConvGeom, x: &mut [Real]) {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ov = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let xc = &mut x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            let (dlo, dhi) = valid_range(od, sd, a, pd, id);
            for b in 0..kh {
                let (hlo, hhi) = valid_range(oh, sh, b, ph, ih);
                for e in 0..kw {
                    let (wlo, whi) = valid_range(ow, sw, e, pw, iw);
                    let src = &cols[row * ov..(row + 1) * ov];
                    for z in dlo..dhi {
                        let zi = z * sd + a - pd;
                        for y in hlo..hhi {
                            let yi = y * sh + b - ph;
                            let base = (zi * ih + yi) * iw;
                            let s = &src[(z * oh + y) * ow..];
                            for x_ in wlo..whi {
                                xc[base + x_ * sw + e - pw] += s[x_];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn check_dims(x: &Tensor, w: &Tensor) -> Result<usize> {
    let dims = w.ndim().saturating_sub(2);
    if !(dims == 2 || dims == 3) {
        return Err(Error::dim(0, format!("weights must be 4D or 5D, got {:?}", w.shape())));
    }
    if x.ndim() != dims + 2 {
        return Err(Error::dim(
            0,
            format!("input {:?} does not match {}D weights {:?}", x.shape(), dims, w.shape()),
        ));
    }
    Ok(dims)
}

fn geometry(x: &Tensor, w: &Tensor, stride: &[usize], pad: &[usize], dims: usize) -> Result<ConvGeom> {
    if stride.len() != dims || pad.len() != dims {
        return Err(Error::config(format!("stride/padding need {} entries", dims)));
    }
    let geom = ConvGeom::new(
        spatial3(x.shape()),
        pad3(&w.shape()[2..], 1),
        pad3(stride, 1),
        pad3(pad, 0),
        2,
    );
    geom.map_err(|e| remap_axis(e, dims))
}

// ConvGeom reports axes in padded 3-axis space; shift to tensor axes.
fn remap_axis(e: Error, dims: usize) -> Error {
    match e {
        Error::Dimension { axis, message } => {
            let spatial = axis.saturating_sub(2) as isize - (3 - dims) as isize;
            Error::Dimension { axis: (2 + spatial.max(0)) as usize, message }
        }
        other => other,
    }
}

fn out_shape(b: usize, c: usize, g: &ConvGeom, dims: usize) -> Vec<usize> {
    let mut s = vec![b, c];
    s.extend_from_slice(&g.output[3 - dims..]);
    s
}

/// Cross-correlation of `x: [B, Cin, S...]` with `w: [Cout, Cin, K...]`.
pub fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: &[usize],
    pad: &[usize],
) -> Result<Tensor> {
    let dims = check_dims(x, w)?;
    let (bsz, cin, cout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    if w.shape()[1] != cin {
        return Err(Error::dim(
            1,
            format!("input has {} channels, weights expect {}", cin, w.shape()[1]),
        ));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::dim(0, format!("bias has {} entries for {} filters", b.len(), cout)));
        }
    }
    let g = geometry(x, w, stride, pad, dims)?;
    let (iv, ov, ck) = (g.in_vol(), g.out_vol(), cin * g.k_vol());
    let mut out = Tensor::zeros(&out_shape(bsz, cout, &g, dims));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; ck * ov] };
    for n in 0..bsz {
        let xb = &x.data()[n * cin * iv..(n + 1) * cin * iv];
        let yb = &mut out.data_mut()[n * cout * ov..(n + 1) * cout * ov];
        let src: &[Real] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, cin, &g, &mut cols);
            &cols
        };
        gemm(cout, ck, ov, w.data(), false, src, false, 0.0, yb);
        if let Some(b) = bias {
            for (c, row) in yb.chunks_mut(ov).enumerate() {
                let bc = b.data()[c];
                row.iter_mut().for_each(|v| *v += bc);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: &[usize],
    pad: &[usize],
    need_input: bool,
) -> Result<ConvGrads> {
    let dims = check_dims(x, w)?;
    let (bsz, cin, cout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    let g = geometry(x, w, stride, pad, dims)?;
    let (iv, ov, ck) = (g.in_vol(), g.out_vol(), cin * g.k_vol());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; ck * ov] };
    let mut dcols = vec![0.0; if g.is_pointwise() { 0 } else { ck * ov }];
    for n in 0..bsz {
        let xb = &x.data()[n * cin * iv..(n + 1) * cin * iv];
        let gb = &grad_out.data()[n * cout * ov..(n + 1) * cout * ov];
        for (c, row) in gb.chunks(ov).enumerate() {
            db.data_mut()[c] += row.iter().sum::<Real>();
        }
        let src: &[Real] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, cin, &g, &mut cols);
            &cols
        };
        gemm(cout, ov, ck, gb, false, src, true, 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[n * cin * iv..(n + 1) * cin * iv];
            if g.is_pointwise() {
                gemm(ck, cout, ov, w.data(), true, gb, false, 1.0, dxb);
            } else {
                gemm(ck, cout, ov, w.data(), true, gb, false, 0.0, &mut dcols);
                col2im(&dcols, cin, &g, dxb);
            }
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

fn tconv_geometry(y: &Tensor, w: &Tensor, stride: &[usize], dims: usize) -> Result<ConvGeom> {
    if stride.len() != dims {
        return Err(Error::config(format!("stride needs {} entries", dims)));
    }
    let s = pad3(stride, 1);
    let k = pad3(&w.shape()[2..], 1);
    let inp = spatial3(y.shape());
    if let Some(i) = s.iter().position(|&v| v == 0) {
        return Err(Error::dim(2 + i - (3 - dims), "stride must be at least 1"));
    }
    let full = [
        (inp[0] - 1) * s[0] + k[0],
        (inp[1] - 1) * s[1] + k[1],
        (inp[2] - 1) * s[2] + k[2],
    ];
    ConvGeom::new(full, k, s, [0; 3], 2).map_err(|e| remap_axis(e, dims))
}

/// Transposed convolution: the adjoint of [`conv_forward`] with the same
/// weights, so `w: [Cy, Cout, K...]` maps `y: [B, Cy, S...]` to
/// `[B, Cout, (S - 1) * stride + K]`.
pub fn transpose_conv_forward(
    y: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: &[usize],
) -> Result<Tensor> {
    let dims = check_dims(y, w)?;
    let (bsz, cy, cout) = (y.shape()[0], y.shape()[1], w.shape()[1]);
    if w.shape()[0] != cy {
        return Err(Error::dim(
            1,
            format!("input has {} channels, weights expect {}", cy, w.shape()[0]),
        ));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::dim(0, format!("bias has {} entries for {} filters", b.len(), cout)));
        }
    }
    let g = tconv_geometry(y, w, stride, dims)?;
    let (full_vol, pv, ck) = (g.in_vol(), g.out_vol(), cout * g.k_vol());
    let mut shape = vec![bsz, cout];
    shape.extend_from_slice(&g.input[3 - dims..]);
    let mut out = Tensor::zeros(&shape);
    let mut cols = vec![0.0; ck * pv];
    for n in 0..bsz {
        let yb = &y.data()[n * cy * pv..(n + 1) * cy * pv];
        gemm(ck, cy, pv, w.data(), true, yb, false, 0.0, &mut cols);
        let ob = &mut out.data_mut()[n * cout * full_vol..(n + 1) * cout * full_vol];
        col2im(&cols, cout, &g, ob);
        if let Some(b) = bias {
            for (c, row) in ob.chunks_mut(full_vol).enumerate() {
                let bc = b.data()[c];
                row.iter_mut().for_each(|v| *v += bc);
            }
        }
    }
    Ok(out)
}

pub fn transpose_conv_backward(
    y: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: &[usize],
    need_input: bool,
) -> Result<ConvGrads> {
    let dims = check_dims(y, w)?;
    let (bsz, cy, cout) = (y.shape()[0], y.shape()[1], w.shape()[1]);
    let g = tconv_geometry(y, w, stride, dims)?;
    let (full_vol, pv, ck) = (g.in_vol(), g.out_vol(), cout * g.k_vol());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    let mut dy = need_input.then(|| Tensor::zeros(y.shape()));
    let mut cols = vec![0.0; ck * pv];
    for n in 0..bsz {
        let gb = &grad_out.data()[n * cout * full_vol..(n + 1) * cout * full_vol];
        for (c, row) in gb.chunks(full_vol).enumerate() {
            db.data_mut()[c] += row.iter().sum::<Real>();
        }
        im2col(gb, cout, &g, &mut cols);
        let yb = &y.data()[n * cy * pv..(n + 1) * cy * pv];
        gemm(cy, pv, ck, yb, false, &cols, true, 1.0, dw.data_mut());
        if let Some(dy) = dy.as_mut() {
            let dyb = &mut dy.data_mut()[n * cy * pv..(n + 1) * cy * pv];
            gemm(cy, ck, pv, w.data(), false, &cols, false, 0.0, dyb);
        }
    }
    Ok(ConvGrads { input: dy, weight: dw, bias: db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_scan() {
        for out in 1..6 {
            for s in 1..3 {
                for k in 0..3 {
                    for p in 0..3 {
                        for n in 1..7 {
                            let (lo, hi) = valid_range(out, s, k, p, n);
                            for o in 0..out {
                                let i = (o * s + k) as isize - p as isize;
                                let inside = i >= 0 && (i as usize) < n;
                                assert_eq!(inside, o >= lo && o < hi, "{out} {s} {k} {p} {n} {o}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_too_large_names_axis() {
        let x = Tensor::zeros(&[1, 1, 4, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        match conv_forward(&x, &w, None, &[1, 1], &[0, 0]) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 1, 1]);
        assert!(matches!(
            conv_forward(&x, &w, None, &[1, 1], &[0, 0]),
            Err(Error::Dimension { axis: 1, .. })
        ));
    }
}
