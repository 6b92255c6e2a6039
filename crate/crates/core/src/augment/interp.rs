//! Point sampling and coordinate-mapped warping of image grids.

use alloc::{vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::image::{strides, unravel};
use crate::{Image, Real};

/// N-linear interpolation of one channel at a continuous voxel coordinate,
/// clamped to the grid.
pub fn sample_linear(values: &[Real], extents: &[usize], st: &[usize], coord: &[f64]) -> Real {
    let d = extents.len();
    let mut base = [0usize; 3];
    let mut upper = [0usize; 3];
    let mut frac = [0.0 as Real; 3];
    for a in 0..d {
        let u = coord[a].clamp(0.0, (extents[a] - 1) as f64);
        let j = (u.floor() as usize).min(extents[a] - 1);
        base[a] = j;
        upper[a] = (j + 1).min(extents[a] - 1);
        frac[a] = (u - j as f64) as Real;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w: Real = 1.0;
        let mut off = 0;
        for a in 0..d {
            if corner >> a & 1 == 1 {
                w *= frac[a];
                off += upper[a] * st[a];
            } else {
                w *= 1.0 - frac[a];
                off += base[a] * st[a];
            }
        }
        if w != 0.0 {
            acc += w * values[off];
        }
    }
    acc
}

pub fn sample_nearest(values: &[Real], extents: &[usize], st: &[usize], coord: &[f64]) -> Real {
    let mut off = 0;
    for a in 0..extents.len() {
        let u = coord[a].clamp(0.0, (extents[a] - 1) as f64);
        off += ((u + 0.5).floor() as usize).min(extents[a] - 1) * st[a];
    }
    values[off]
}

/// Resample every channel at `map(output index) -> source coordinate`.
pub fn warp(image: &Image, nearest: bool, mut map: impl FnMut(&[usize], &mut [f64])) -> Image {
    let ext = image.extents().to_vec();
    assert!(ext.len() <= 3, "warp supports up to three spatial axes");
    let st = strides(&ext);
    let n = image.voxels();
    let d = ext.len();
    let mut coords = vec![0.0; n * d];
    let mut idx = vec![0; d];
    for flat in 0..n {
        unravel(flat, &ext, &mut idx);
        map(&idx, &mut coords[flat * d..(flat + 1) * d]);
    }
    let mut values: Vec<Real> = Vec::with_capacity(image.values().len());
    for c in 0..image.channels() {
        let ch = image.channel(c);
        for flat in 0..n {
            let p = &coords[flat * d..(flat + 1) * d];
            values.push(if nearest { sample_nearest(ch, &ext, &st, p) } else { sample_linear(ch, &ext, &st, p) });
        }
    }
    image.like(image.channels(), values).expect("same layout")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_is_exact() {
        let img = Image::from_fn(&[3, 4], |i| (i[0] as Real).sin() + i[1] as Real * 0.3);
        let out = warp(&img, false, |i, c| {
            c[0] = i[0] as f64;
            c[1] = i[1] as f64;
        });
        assert_eq!(out, img);
    }

    #[test]
    fn midpoint_is_average() {
        let v = [0.0, 2.0, 4.0, 6.0];
        assert_eq!(sample_linear(&v, &[2, 2], &[2, 1], &[0.5, 0.5]), 3.0);
        assert_eq!(sample_nearest(&v, &[2, 2], &[2, 1], &[0.6, 0.2]), 4.0);
    }
}
