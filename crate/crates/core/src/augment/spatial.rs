//! Geometric transforms applied jointly to an image and its mask.

use alloc::{format, vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::interp::{sample_linear, warp};
use super::Sample;
use crate::image::{strides, unravel};
use crate::preprocess::{resample, Interp, ResampleTarget};
use crate::{Error, Image, Real, Result};

fn check_axis(axis: usize, dims: usize) -> Result<()> {
    if axis >= dims {
        return Err(Error::config(format!("axis {axis} is invalid for a {dims}D image")));
    }
    Ok(())
}

fn both(sample: &Sample, f: impl Fn(&Image, bool) -> Result<Image>) -> Result<Sample> {
    Ok(Sample {
        image: f(&sample.image, false)?,
        mask: sample.mask.as_ref().map(|m| f(m, true)).transpose()?,
    })
}

/// Permute voxels by an exact index map `out[idx] = in[src(idx)]`.
fn permute(image: &Image, src: impl Fn(&[usize], &mut [usize])) -> Image {
    let ext = image.extents().to_vec();
    let st = strides(&ext);
    let n = image.voxels();
    let mut idx = vec![0; ext.len()];
    let mut from = vec![0; ext.len()];
    let mut map = Vec::with_capacity(n);
    for flat in 0..n {
        unravel(flat, &ext, &mut idx);
        src(&idx, &mut from);
        map.push(from.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>());
    }
    let mut values = Vec::with_capacity(image.values().len());
    for c in 0..image.channels() {
        let ch = image.channel(c);
        values.extend(map.iter().map(|&m| ch[m]));
    }
    image.like(image.channels(), values).expect("same layout")
}

/// Reverse the element order along each listed axis.
pub fn flip(sample: &Sample, axes: &[usize]) -> Result<Sample> {
    let dims = sample.image.dims();
    for &a in axes {
        check_axis(a, dims)?;
    }
    let ext = sample.image.extents().to_vec();
    both(sample, |img, _| {
        Ok(permute(img, |i, out| {
            out.copy_from_slice(i);
            for &a in axes {
                out[a] = ext[a] - 1 - i[a];
            }
        }))
    })
}

/// Rotate by `quarter_turns * 90` degrees in the plane of `axes`. Odd turns
/// need equal extents on both axes so the grid shape is unchanged.
pub fn rotate(sample: &Sample, quarter_turns: u32, axes: (usize, usize)) -> Result<Sample> {
    let dims = sample.image.dims();
    let (a, b) = axes;
    check_axis(a, dims)?;
    check_axis(b, dims)?;
    if a == b {
        return Err(Error::config(format!("rotation plane needs two distinct axes, got ({a}, {b})")));
    }
    let ext = sample.image.extents().to_vec();
    let turns = quarter_turns % 4;
    if turns % 2 == 1 && ext[a] != ext[b] {
        return Err(Error::config(format!(
            "90 degree rotation in plane ({a}, {b}) needs equal extents, got {} and {}",
            ext[a], ext[b]
        )));
    }
    let (na, nb) = (ext[a], ext[b]);
    both(sample, |img, _| {
        Ok(permute(img, |i, out| {
            out.copy_from_slice(i);
            let (x, y) = (i[a], i[b]);
            let (sx, sy) = match turns {
                0 => (x, y),
                1 => (nb - 1 - y, x),
                2 => (na - 1 - x, nb - 1 - y),
                _ => (y, na - 1 - x),
            };
            out[a] = sx;
            out[b] = sy;
        }))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams {
    /// Row-major `d x d` matrix taking output offsets from the centre to
    /// source offsets.
    pub matrix: Vec<f64>,
    /// Source shift in voxels.
    pub translation: Vec<f64>,
}

impl AffineParams {
    pub fn identity(dims: usize) -> Self {
        let mut matrix = vec![0.0; dims * dims];
        for i in 0..dims {
            matrix[i * dims + i] = 1.0;
        }
        Self { matrix, translation: vec![0.0; dims] }
    }

    /// Rotation (radians, one angle per rotation plane: `(0,1)` in 2D;
    /// `(1,2), (0,2), (0,1)` in 3D) combined with isotropic zoom `scale`.
    pub fn from_parts(dims: usize, angles: &[f64], scale: f64, translation: Vec<f64>) -> Result<Self> {
        let planes: &[(usize, usize)] = if dims == 2 { &[(0, 1)] } else { &[(1, 2), (0, 2), (0, 1)] };
        if angles.len() != planes.len() || translation.len() != dims {
            return Err(Error::config(format!(
                "affine in {dims}D needs {} angle(s) and {dims} translations",
                planes.len()
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::config(format!("affine scale must be positive, got {scale}")));
        }
        let mut m = Self::identity(dims).matrix;
        for (&(p, q), &t) in planes.iter().zip(angles) {
            let (s, c) = t.sin_cos();
            let mut r = Self::identity(dims).matrix;
            r[p * dims + p] = c;
            r[p * dims + q] = -s;
            r[q * dims + p] = s;
            r[q * dims + q] = c;
            let mut next = vec![0.0; dims * dims];
            for i in 0..dims {
                for j in 0..dims {
                    next[i * dims + j] = (0..dims).map(|k| r[i * dims + k] * m[k * dims + j]).sum();
                }
            }
            m = next;
        }
        m.iter_mut().for_each(|v| *v /= scale);
        Ok(Self { matrix: m, translation })
    }
}

/// Affine resampling about the grid centre; linear for the image, nearest
/// for the mask, border values replicated.
pub fn affine(sample: &Sample, params: &AffineParams) -> Result<Sample> {
    let ext = sample.image.extents().to_vec();
    let d = ext.len();
    if params.matrix.len() != d * d || params.translation.len() != d {
        return Err(Error::config(format!("affine parameters do not match a {d}D image")));
    }
    let centre: Vec<f64> = ext.iter().map(|&e| (e as f64 - 1.0) / 2.0).collect();
    both(sample, |img, nearest| {
        Ok(warp(img, nearest, |i, out| {
            for r in 0..d {
                let mut s = centre[r] + params.translation[r];
                for k in 0..d {
                    s += params.matrix[r * d + k] * (i[k] as f64 - centre[k]);
                }
                out[r] = s;
            }
        }))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticParams {
    /// Control points per axis (each at least 2).
    pub grid: Vec<usize>,
    /// Per-axis displacement (voxels) at every control point, row-major.
    pub displacement: Vec<Vec<Real>>,
}

/// Dense deformation from a coarse control grid upsampled linearly.
pub fn elastic(sample: &Sample, params: &ElasticParams) -> Result<Sample> {
    let ext = sample.image.extents().to_vec();
    let d = ext.len();
    let cells: usize = params.grid.iter().product();
    if params.grid.len() != d || params.grid.iter().any(|&g| g < 2) {
        return Err(Error::config(format!("elastic grid {:?} invalid for a {d}D image", params.grid)));
    }
    if params.displacement.len() != d || params.displacement.iter().any(|v| v.len() != cells) {
        return Err(Error::config("elastic displacement does not match the control grid"));
    }
    let gst = strides(&params.grid);
    both(sample, |img, nearest| {
        let mut pos = vec![0.0; d];
        Ok(warp(img, nearest, |i, out| {
            for a in 0..d {
                pos[a] = if ext[a] > 1 {
                    i[a] as f64 * (params.grid[a] - 1) as f64 / (ext[a] - 1) as f64
                } else {
                    0.0
                };
            }
            for a in 0..d {
                out[a] = i[a] as f64 + sample_linear(&params.displacement[a], &params.grid, &gst, &pos) as f64;
            }
        }))
    })
}

/// Simulate a coarser acquisition along `axis`: downsample by `factor`
/// and back, linear for the image and nearest for the mask.
pub fn anisotropy(sample: &Sample, axis: usize, factor: f64) -> Result<Sample> {
    let ext = sample.image.extents().to_vec();
    check_axis(axis, ext.len())?;
    if !(factor >= 1.0) {
        return Err(Error::config(format!("anisotropy factor must be at least 1, got {factor}")));
    }
    let mut low = ext.clone();
    low[axis] = ((ext[axis] as f64 / factor).round() as usize).max(1);
    both(sample, |img, nearest| {
        let interp = if nearest { Interp::Nearest } else { Interp::Linear };
        let down = resample(img, &ResampleTarget::Extents(low.clone()), interp)?;
        let up = resample(&down, &ResampleTarget::Extents(ext.clone()), interp)?;
        img.like(img.channels(), up.into_values())
    })
}
