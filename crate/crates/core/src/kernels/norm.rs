use alloc::{vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Real, Tensor};

pub const NORM_EPS: Real = 1e-5;

/// Saved state of a normalisation forward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub xhat: Tensor,
    /// 1/sqrt(var + eps) per normalisation group.
    pub inv_std: Vec<Real>,
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
}

/// Visit the flat indices of group `(n, c)` for an `[N, C, vol]` layout.
fn group_iter(
    shape: &[usize],
    per_sample: bool,
) -> (usize, usize, usize, impl Fn(usize, &mut dyn FnMut(usize))) {
    let (bsz, ch) = (shape[0], shape[1]);
    let vol: usize = shape[2..].iter().product();
    let groups = if per_sample { bsz * ch } else { ch };
    let visit = move |g: usize, f: &mut dyn FnMut(usize)| {
        if per_sample {
            let base = g * vol;
            (base..base + vol).for_each(&mut *f);
        } else {
            for n in 0..bsz {
                let base = (n * ch + g) * vol;
                (base..base + vol).for_each(&mut *f);
            }
        }
    };
    (groups, if per_sample { vol } else { bsz * vol }, ch, visit)
}

/// Normalise over spatial axes per (sample, channel) when `per_sample`
/// (instance norm) or over batch and spatial axes per channel (batch norm),
/// then apply the per-channel affine `gamma * xhat + beta`.
pub fn norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    per_sample: bool,
) -> (Tensor, NormCache) {
    let (groups, count, ch, visit) = group_iter(x.shape(), per_sample);
    let xd = x.data();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = vec![0.0; groups];
    let mut means = vec![0.0; groups];
    let mut vars = vec![0.0; groups];
    let mut idx = Vec::with_capacity(count);
    for g in 0..groups {
        idx.clear();
        visit(g, &mut |i| idx.push(i));
        let mean = idx.iter().map(|&i| xd[i]).sum::<Real>() / count as Real;
        let var = idx.iter().map(|&i| (xd[i] - mean) * (xd[i] - mean)).sum::<Real>() / count as Real;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        let c = g % ch;
        let (ga, be) = (gamma.data()[c], beta.data()[c]);
        let (xh, yd) = (xhat.data_mut(), y.data_mut());
        for &i in &idx {
            let h = (xd[i] - mean) * is;
            xh[i] = h;
            yd[i] = ga * h + be;
        }
        inv_std[g] = is;
        means[g] = mean;
        vars[g] = var;
    }
    (y, NormCache { xhat, inv_std, mean: means, var: vars })
}

pub struct NormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn norm_backward(gy: &Tensor, gamma: &Tensor, cache: &NormCache, per_sample: bool) -> NormGrads {
    let shape = gy.shape();
    let (groups, count, ch, visit) = group_iter(shape, per_sample);
    let (gd, xh) = (gy.data(), cache.xhat.data());
    let mut dx = Tensor::zeros(shape);
    let mut dgamma = Tensor::zeros(&[ch]);
    let mut dbeta = Tensor::zeros(&[ch]);
    let mut idx = Vec::with_capacity(count);
    for g in 0..groups {
        let c = g % ch;
        idx.clear();
        visit(g, &mut |i| idx.push(i));
        let (mut sg, mut sgx) = (0.0, 0.0);
        for &i in &idx {
            sg += gd[i];
            sgx += gd[i] * xh[i];
        }
        dgamma.data_mut()[c] += sgx;
        dbeta.data_mut()[c] += sg;
        let ga = gamma.data()[c];
        let n = count as Real;
        let is = cache.inv_std[g];
        // dxhat = gy * gamma; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let (m1, m2) = (ga * sg / n, ga * sgx / n);
        let d = dx.data_mut();
        for &i in &idx {
            d[i] = is * (ga * gd[i] - m1 - xh[i] * m2);
        }
    }
    NormGrads { input: dx, gamma: dgamma, beta: dbeta }
}

/// Batch norm with frozen running statistics (inference mode).
pub fn batch_norm_frozen(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Tensor {
    let ch = x.shape()[1];
    let vol: usize = x.shape()[2..].iter().product();
    let mut y = x.clone();
    for (k, chunk) in y.data_mut().chunks_mut(vol).enumerate() {
        let c = k % ch;
        let is = 1.0 / (running_var.data()[c] + NORM_EPS).sqrt();
        let (m, ga, be) = (running_mean.data()[c], gamma.data()[c], beta.data()[c]);
        chunk.iter_mut().for_each(|v| *v = ga * (*v - m) * is + be);
    }
    y
}

pub fn batch_norm_frozen_backward(
    x: &Tensor,
    gy: &Tensor,
    gamma: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> NormGrads {
    let ch = x.shape()[1];
    let vol: usize = x.shape()[2..].iter().product();
    let mut dx = gy.clone();
    let mut dgamma = Tensor::zeros(&[ch]);
    let mut dbeta = Tensor::zeros(&[ch]);
    for (k, chunk) in dx.data_mut().chunks_mut(vol).enumerate() {
        let c = k % ch;
        let is = 1.0 / (running_var.data()[c] + NORM_EPS).sqrt();
        let m = running_mean.data()[c];
        let xs = &x.data()[k * vol..(k + 1) * vol];
        for (d, &xv) in chunk.iter_mut().zip(xs) {
            dgamma.data_mut()[c] += *d * (xv - m) * is;
            dbeta.data_mut()[c] += *d;
            *d *= gamma.data()[c] * is;
        }
    }
    NormGrads { input: dx, gamma: dgamma, beta: dbeta }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_norm_statistics() {
        let x = Tensor::from_fn(&[2, 3, 4, 4], |i| ((i * 37) % 11) as Real);
        let (y, _) = norm_forward(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), true);
        for chunk in y.data().chunks(16) {
            let m: Real = chunk.iter().sum::<Real>() / 16.0;
            let v: Real = chunk.iter().map(|a| (a - m) * (a - m)).sum::<Real>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
