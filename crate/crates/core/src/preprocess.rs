//! Intensity normalisation and geometric harmonisation.

use alloc::{format, vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::image::{strides, unravel, Geometry};
use crate::{Error, Image, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntensityRange {
    pub min: Real,
    pub max: Real,
}

impl IntensityRange {
    pub fn new(min: Real, max: Real) -> Result<Self> {
        if min.is_nan() || max.is_nan() || min > max {
            return Err(Error::config(format!("intensity range needs min <= max, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn unbounded() -> Self {
        Self { min: Real::NEG_INFINITY, max: Real::INFINITY }
    }
}

/// Zero every value outside the range; values inside are untouched.
pub fn threshold(image: &Image, range: IntensityRange) -> Result<Image> {
    let r = IntensityRange::new(range.min, range.max)?;
    Ok(image.map(|v| if v < r.min || v > r.max { 0.0 } else { v }))
}

/// Saturate values to the range bounds.
pub fn clip(image: &Image, range: IntensityRange) -> Result<Image> {
    let r = IntensityRange::new(range.min, range.max)?;
    Ok(image.map(|v| v.max(r.min).min(r.max)))
}

/// Affine map of each channel's `[min, max]` onto `[out_min, out_max]`.
pub fn rescale(image: &Image, out_min: Real, out_max: Real) -> Result<Image> {
    if !(out_min < out_max) {
        return Err(Error::config(format!("rescale needs out_min < out_max, got [{out_min}, {out_max}]")));
    }
    let mut out = image.clone();
    for c in 0..image.channels() {
        let ch = out.channel_mut(c);
        let (lo, hi) = ch.iter().fold((Real::INFINITY, Real::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            return Err(Error::degenerate(format!("channel {c} is constant ({lo}); cannot rescale")));
        }
        let scale = (out_max - out_min) / (hi - lo);
        for v in ch.iter_mut() {
            *v = out_min + (*v - lo) * scale;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub enum ZscoreMode<'a> {
    Full,
    Nonzero,
    /// Statistics over voxels where the mask is nonzero.
    Explicit(&'a Image),
}

/// Standardise each channel to zero mean and unit population standard
/// deviation over the selected region. Outside the region (masked modes)
/// voxels become 0.
pub fn zscore(image: &Image, mode: ZscoreMode) -> Result<Image> {
    if let ZscoreMode::Explicit(mask) = mode {
        image.same_extents(mask)?;
    }
    let mut out = image.clone();
    for c in 0..image.channels() {
        let ch = out.channel_mut(c);
        let selected: Vec<bool> = match mode {
            ZscoreMode::Full => vec![true; ch.len()],
            ZscoreMode::Nonzero => ch.iter().map(|&v| v != 0.0).collect(),
            ZscoreMode::Explicit(mask) => mask.channel(0).iter().map(|&m| m != 0.0).collect(),
        };
        let n = selected.iter().filter(|&&s| s).count();
        if n < 2 {
            return Err(Error::degenerate(format!("z-score region of channel {c} has {n} voxel(s)")));
        }
        let mean = ch.iter().zip(&selected).filter(|(_, &s)| s).map(|(&v, _)| v).sum::<Real>() / n as Real;
        let var = ch
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| s)
            .map(|(&v, _)| (v - mean) * (v - mean))
            .sum::<Real>()
            / n as Real;
        if !(var > 0.0) {
            return Err(Error::degenerate(format!("z-score region of channel {c} has zero variance")));
        }
        let std = var.sqrt();
        for (v, &s) in ch.iter_mut().zip(&selected) {
            *v = if s { (*v - mean) / std } else { 0.0 };
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResampleTarget {
    Spacing(Vec<f64>),
    Extents(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Linear,
    Nearest,
}

/// Source coordinate of each output sample along one axis, mapping voxel
/// centres: `u = (i + 0.5) * ratio - 0.5`, clamped to the valid range.
fn axis_taps(old: usize, new: usize, ratio: f64, interp: Interp) -> Vec<(usize, usize, Real)> {
    (0..new)
        .map(|i| {
            let u = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (old - 1) as f64);
            match interp {
                Interp::Nearest => {
                    let j = ((u + 0.5).floor() as usize).min(old - 1);
                    (j, j, 0.0)
                }
                Interp::Linear => {
                    let j = (u.floor() as usize).min(old - 1);
                    let k = (j + 1).min(old - 1);
                    (j, k, (u - j as f64) as Real)
                }
            }
        })
        .collect()
}

/// Resample one axis of a channel-major buffer.
fn resample_axis(values: &[Real], channels: usize, extents: &[usize], axis: usize, taps: &[(usize, usize, Real)]) -> Vec<Real> {
    let outer: usize = channels * extents[..axis].iter().product::<usize>();
    let inner: usize = extents[axis + 1..].iter().product();
    let old = extents[axis];
    let new = taps.len();
    let mut out = vec![0.0; outer * new * inner];
    for o in 0..outer {
        let src = &values[o * old * inner..(o + 1) * old * inner];
        let dst = &mut out[o * new * inner..(o + 1) * new * inner];
        for (i, &(j, k, f)) in taps.iter().enumerate() {
            let a = &src[j * inner..(j + 1) * inner];
            let b = &src[k * inner..(k + 1) * inner];
            for ((d, &x), &y) in dst[i * inner..(i + 1) * inner].iter_mut().zip(a).zip(b) {
                // `x + f (y - x)` keeps constant signals exact.
                *d = x + f * (y - x);
            }
        }
    }
    out
}

/// Resample to a target spacing or target extents. Physical extent is kept
/// (up to rounding of the new voxel counts).
pub fn resample(image: &Image, target: &ResampleTarget, interp: Interp) -> Result<Image> {
    let dims = image.dims();
    let old_ext = image.extents().to_vec();
    let old_sp = image.geometry().spacing.clone();
    let (new_ext, new_sp): (Vec<usize>, Vec<f64>) = match target {
        ResampleTarget::Spacing(sp) => {
            if sp.len() != dims {
                return Err(Error::config(format!("target spacing {sp:?} for a {dims}D image")));
            }
            if let Some(bad) = sp.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                return Err(Error::config(format!("target spacing must be positive, got {bad}")));
            }
            let ext = old_ext
                .iter()
                .zip(&old_sp)
                .zip(sp)
                .map(|((&e, &o), &n)| ((e as f64 * o / n).round() as usize).max(1))
                .collect();
            (ext, sp.clone())
        }
        ResampleTarget::Extents(ext) => {
            if ext.len() != dims {
                return Err(Error::config(format!("target extents {ext:?} for a {dims}D image")));
            }
            if ext.contains(&0) {
                return Err(Error::config(format!("target extents must be positive, got {ext:?}")));
            }
            let sp = old_ext.iter().zip(&old_sp).zip(ext).map(|((&e, &o), &n)| o * e as f64 / n as f64).collect();
            (ext.clone(), sp)
        }
    };
    let mut values = image.values().to_vec();
    let mut ext = old_ext.clone();
    for axis in 0..dims {
        if ext[axis] == new_ext[axis] && old_sp[axis] == new_sp[axis] {
            continue;
        }
        let ratio = new_sp[axis] / old_sp[axis];
        let taps = axis_taps(old_ext[axis], new_ext[axis], ratio, interp);
        values = resample_axis(&values, image.channels(), &ext, axis, &taps);
        ext[axis] = new_ext[axis];
    }
    let origin = image
        .geometry()
        .origin
        .iter()
        .zip(old_sp.iter().zip(&new_sp))
        .map(|(&o, (&a, &b))| o + 0.5 * (b - a))
        .collect();
    Image::new(&new_ext, image.channels(), values, Geometry { spacing: new_sp, origin })
}

/// Where a cropped image sat inside its original.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub offset: Vec<usize>,
    pub original: Vec<usize>,
}

/// Copy the box `[offset, offset + extents)` of every channel.
pub fn crop_box(image: &Image, offset: &[usize], extents: &[usize]) -> Result<Image> {
    for (axis, ((&o, &e), &full)) in offset.iter().zip(extents).zip(image.extents()).enumerate() {
        if e == 0 || o + e > full {
            return Err(Error::dim(axis, format!("box {o}+{e} exceeds extent {full}")));
        }
    }
    let src_strides = strides(image.extents());
    let n: usize = extents.iter().product();
    let voxels = image.voxels();
    let mut values = Vec::with_capacity(n * image.channels());
    let mut idx = vec![0; extents.len()];
    for c in 0..image.channels() {
        let ch = &image.values()[c * voxels..(c + 1) * voxels];
        for flat in 0..n {
            unravel(flat, extents, &mut idx);
            let s: usize = idx.iter().zip(offset).zip(&src_strides).map(|((&i, &o), &st)| (i + o) * st).sum();
            values.push(ch[s]);
        }
    }
    let g = image.geometry();
    let origin = g.origin.iter().zip(&g.spacing).zip(offset).map(|((&o, &s), &k)| o + s * k as f64).collect();
    Image::new(extents, image.channels(), values, Geometry { spacing: g.spacing.clone(), origin })
}

/// Remove all-zero leading and trailing hyperplanes along every axis (a
/// plane counts as zero only if it is zero in every channel), applying the
/// same crop to each companion.
pub fn crop_zero_planes(image: &Image, companions: &[Image]) -> Result<(Image, Vec<Image>, CropRecord)> {
    for c in companions {
        image.same_extents(c)?;
    }
    let dims = image.dims();
    let ext = image.extents();
    let mut lo = vec![usize::MAX; dims];
    let mut hi = vec![0usize; dims];
    let voxels = image.voxels();
    let mut idx = vec![0; dims];
    let mut any = false;
    for flat in 0..voxels {
        if (0..image.channels()).all(|c| image.values()[c * voxels + flat] == 0.0) {
            continue;
        }
        any = true;
        unravel(flat, ext, &mut idx);
        for a in 0..dims {
            lo[a] = lo[a].min(idx[a]);
            hi[a] = hi[a].max(idx[a]);
        }
    }
    if !any {
        return Err(Error::degenerate("image is entirely zero; nothing to crop to"));
    }
    let size: Vec<usize> = lo.iter().zip(&hi).map(|(&l, &h)| h - l + 1).collect();
    let cropped = crop_box(image, &lo, &size)?;
    let comps = companions.iter().map(|c| crop_box(c, &lo, &size)).collect::<Result<Vec<_>>>()?;
    Ok((cropped, comps, CropRecord { offset: lo, original: ext.to_vec() }))
}

/// Zero-pad a cropped image back to its original extents.
pub fn uncrop(image: &Image, record: &CropRecord) -> Result<Image> {
    let dims = record.original.len();
    if image.dims() != dims {
        return Err(Error::dim(0, format!("{}D image for a {dims}D crop record", image.dims())));
    }
    for (axis, ((&o, &e), &full)) in record.offset.iter().zip(image.extents()).zip(&record.original).enumerate() {
        if o + e > full {
            return Err(Error::dim(axis, format!("crop {o}+{e} exceeds original extent {full}")));
        }
    }
    let dst_strides = strides(&record.original);
    let total: usize = record.original.iter().product();
    let mut values = vec![0.0; total * image.channels()];
    let voxels = image.voxels();
    let mut idx = vec![0; dims];
    for c in 0..image.channels() {
        for flat in 0..voxels {
            unravel(flat, image.extents(), &mut idx);
            let d: usize = idx.iter().zip(&record.offset).zip(&dst_strides).map(|((&i, &o), &st)| (i + o) * st).sum();
            values[c * total + d] = image.values()[c * voxels + flat];
        }
    }
    let g = image.geometry();
    let origin = g.origin.iter().zip(&g.spacing).zip(&record.offset).map(|((&o, &s), &k)| o - s * k as f64).collect();
    Image::new(&record.original, image.channels(), values, Geometry { spacing: g.spacing.clone(), origin })
}

/// Region selector for z-scoring inside a pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZscoreRegion {
    Full,
    Nonzero,
    /// Use the subject's label mask as the region.
    Label,
}

/// One configured pre-processing step.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Threshold(IntensityRange),
    Clip(IntensityRange),
    Rescale { min: Real, max: Real },
    Zscore(ZscoreRegion),
    Resample(ResampleTarget),
    CropZeroPlanes,
}

/// Apply steps left to right. The mask follows every geometric step
/// (nearest interpolation for resampling) and is untouched by intensity
/// steps.
pub fn apply_steps(steps: &[Step], mut image: Image, mut mask: Option<Image>) -> Result<(Image, Option<Image>)> {
    for step in steps {
        match step {
            Step::Threshold(r) => image = threshold(&image, *r)?,
            Step::Clip(r) => image = clip(&image, *r)?,
            Step::Rescale { min, max } => image = rescale(&image, *min, *max)?,
            Step::Zscore(region) => {
                image = match region {
                    ZscoreRegion::Full => zscore(&image, ZscoreMode::Full)?,
                    ZscoreRegion::Nonzero => zscore(&image, ZscoreMode::Nonzero)?,
                    ZscoreRegion::Label => {
                        let m = mask
                            .as_ref()
                            .ok_or_else(|| Error::config("z-score over the label region needs a mask"))?;
                        zscore(&image, ZscoreMode::Explicit(m))?
                    }
                }
            }
            Step::Resample(target) => {
                let new = resample(&image, target, Interp::Linear)?;
                if let Some(m) = &mask {
                    mask = Some(resample(m, &ResampleTarget::Extents(new.extents().to_vec()), Interp::Nearest)?);
                }
                image = new;
            }
            Step::CropZeroPlanes => {
                let comps: Vec<Image> = mask.iter().cloned().collect();
                let (img, mut rest, _) = crop_zero_planes(&image, &comps)?;
                image = img;
                mask = rest.pop();
            }
        }
    }
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(v: &[Real]) -> Image {
        Image::new(&[v.len()], 1, v.to_vec(), Geometry::unit(1)).unwrap()
    }

    #[test]
    fn threshold_and_clip_elementwise() {
        let r = IntensityRange::new(0.0, 5.0).unwrap();
        assert_eq!(threshold(&line(&[-5.0, 0.0, 3.0, 9.0]), r).unwrap().values(), &[0.0, 0.0, 3.0, 0.0]);
        let hu = IntensityRange::new(-900.0, -300.0).unwrap();
        let c = clip(&line(&[-1000.0, -500.0, 0.0]), hu).unwrap();
        assert_eq!(c.values(), &[-900.0, -500.0, -300.0]);
        assert_eq!(clip(&c, hu).unwrap(), c);
        assert!(IntensityRange::new(2.0, 1.0).is_err());
    }

    #[test]
    fn rescale_affine_and_constant() {
        let r = rescale(&line(&[0.0, 127.5, 255.0]), 0.0, 1.0).unwrap();
        assert_eq!(r.values(), &[0.0, 0.5, 1.0]);
        assert!(matches!(rescale(&line(&[2.0, 2.0]), 0.0, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zscore_by_hand() {
        let z = zscore(&line(&[1.0, 2.0, 3.0]), ZscoreMode::Full).unwrap();
        let s = (2.0 as Real / 3.0).sqrt();
        for (a, b) in z.values().iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
            assert!((a - b).abs() < 1e-12);
        }
        let nz = zscore(&line(&[0.0, 0.0, 4.0, 6.0]), ZscoreMode::Nonzero).unwrap();
        assert_eq!(nz.values(), &[0.0, 0.0, -1.0, 1.0]);
        assert!(matches!(zscore(&line(&[3.0, 3.0]), ZscoreMode::Full), Err(Error::Degenerate(_))));
    }

    #[test]
    fn resample_halves_by_block_average() {
        let img = Image::from_fn(&[4, 4], |i| (i[0] * 4 + i[1]) as Real);
        let r = resample(&img, &ResampleTarget::Spacing(vec![2.0, 2.0]), Interp::Linear).unwrap();
        assert_eq!(r.extents(), &[2, 2]);
        assert_eq!(r.values(), &[2.5, 4.5, 10.5, 12.5]);
        let same = resample(&img, &ResampleTarget::Spacing(vec![1.0, 1.0]), Interp::Linear).unwrap();
        assert_eq!(same.values(), img.values());
    }

    #[test]
    fn crop_finds_block() {
        let img = Image::from_fn(&[6, 6], |i| if (2..4).contains(&i[0]) && (2..4).contains(&i[1]) { 1.0 } else { 0.0 });
        let (c, m, rec) = crop_zero_planes(&img, std::slice::from_ref(&img)).unwrap();
        assert_eq!(c.extents(), &[2, 2]);
        assert_eq!(rec.offset, vec![2, 2]);
        assert_eq!(m[0], c);
        assert_eq!(uncrop(&c, &rec).unwrap(), img);
    }
}
