//! Intensity transforms; masks pass through untouched.

use alloc::{format, vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, Image, Real, Result, Rng};

/// Normalised Gaussian taps for `sigma` (voxels), radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<Real> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as Real).collect()
}

/// Separable Gaussian blur with periodic boundaries; one sigma per axis.
pub fn blur(image: &Image, sigma: &[f64]) -> Result<Image> {
    let ext = image.extents().to_vec();
    if sigma.len() != ext.len() {
        return Err(Error::config(format!("blur needs {} sigma values, got {}", ext.len(), sigma.len())));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::config(format!("blur sigma must be non-negative, got {s}")));
    }
    let mut values = image.values().to_vec();
    let mut line = Vec::new();
    for (axis, &s) in sigma.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let k = gaussian_kernel(s);
        let r = (k.len() / 2) as i64;
        let n = ext[axis];
        let inner: usize = ext[axis + 1..].iter().product();
        let outer = values.len() / (n * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                line.clear();
                line.extend((0..n).map(|j| values[base + j * inner]));
                for j in 0..n {
                    let mut acc = 0.0;
                    for (t, &w) in k.iter().enumerate() {
                        let src = (j as i64 + t as i64 - r).rem_euclid(n as i64) as usize;
                        acc += w * line[src];
                    }
                    values[base + j * inner] = acc;
                }
            }
        }
    }
    image.like(image.channels(), values)
}

/// Additive Gaussian noise drawn from a stream seeded with `seed`.
pub fn noise(image: &Image, mean: f64, std: f64, seed: u64) -> Result<Image> {
    if !(std >= 0.0) {
        return Err(Error::config(format!("noise std must be non-negative, got {std}")));
    }
    let mut rng = Rng::new(seed);
    let mut out = image.clone();
    for v in out.values_mut() {
        *v += rng.normal(mean, std) as Real;
    }
    Ok(out)
}

/// Per channel: rescale to `[0, 1]`, raise to `gamma`, map back. Constant
/// channels are left alone.
pub fn gamma(image: &Image, gamma: f64) -> Result<Image> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!("gamma must be positive, got {gamma}")));
    }
    let mut out = image.clone();
    for c in 0..image.channels() {
        let ch = out.channel_mut(c);
        let (lo, hi) = ch.iter().fold((Real::INFINITY, Real::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            continue;
        }
        let span = hi - lo;
        let g = gamma as Real;
        for v in ch.iter_mut() {
            *v = lo + ((*v - lo) / span).powf(g) * span;
        }
    }
    Ok(out)
}
