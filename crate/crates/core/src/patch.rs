//! Patch extraction and patch-location sampling.

use alloc::{format, string::String, vec, vec::Vec};

use crate::image::{strides, unravel};
use crate::{Error, Image, Result, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadPolicy {
    Zero,
    /// Mirror about the border voxels (`-1 -> 1`), periodic beyond.
    Reflect,
}

/// A sub-grid of a subject together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub subject_id: String,
    pub corner: Vec<i64>,
    pub size: Vec<usize>,
    pub image: Image,
    pub mask: Option<Image>,
}

fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Copy `size` voxels starting at `corner` (may be negative or run past the
/// end); out-of-bounds voxels follow `pad`. The patch must overlap the image.
pub fn extract_patch(image: &Image, corner: &[i64], size: &[usize], pad: PadPolicy) -> Result<Image> {
    let ext = image.extents();
    let d = ext.len();
    if corner.len() != d || size.len() != d {
        return Err(Error::dim(0, format!("corner {corner:?} / size {size:?} for a {d}D image")));
    }
    for a in 0..d {
        let (c, s, e) = (corner[a], size[a] as i64, ext[a] as i64);
        if s == 0 || c + s <= 0 || c >= e {
            return Err(Error::dim(a, format!("patch [{c}, {}) does not overlap extent {e}", c + s)));
        }
    }
    let st = strides(ext);
    let n: usize = size.iter().product();
    // Per-axis source index, None when zero-filled.
    let taps: Vec<Vec<Option<usize>>> = (0..d)
        .map(|a| {
            (0..size[a])
                .map(|k| {
                    let i = corner[a] + k as i64;
                    if (0..ext[a] as i64).contains(&i) {
                        Some(i as usize)
                    } else {
                        match pad {
                            PadPolicy::Zero => None,
                            PadPolicy::Reflect => Some(reflect(i, ext[a])),
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut src = Vec::with_capacity(n);
    let mut idx = vec![0; d];
    for flat in 0..n {
        unravel(flat, size, &mut idx);
        let mut off = Some(0);
        for a in 0..d {
            off = match (off, taps[a][idx[a]]) {
                (Some(o), Some(i)) => Some(o + i * st[a]),
                _ => None,
            };
        }
        src.push(off);
    }
    let mut values = Vec::with_capacity(n * image.channels());
    for c in 0..image.channels() {
        let ch = image.channel(c);
        values.extend(src.iter().map(|o| o.map_or(0.0, |o| ch[o])));
    }
    let g = image.geometry();
    let origin = g.origin.iter().zip(&g.spacing).zip(corner).map(|((&o, &s), &k)| o + s * k as f64).collect();
    Image::new(size, image.channels(), values, crate::Geometry { spacing: g.spacing.clone(), origin })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelPolicy {
    Uniform,
    /// Fraction of patches centred on a foreground voxel.
    ForegroundBiased(f64),
}

/// Flat indices of nonzero voxels in the first mask channel.
pub fn foreground_voxels(mask: &Image) -> Vec<usize> {
    mask.channel(0).iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect()
}

/// Outcome of drawing a patch location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Draw {
    pub corner: Vec<i64>,
    /// The foreground policy had no foreground to draw from.
    pub fell_back: bool,
}

/// Draw a patch corner. Corners keep the patch inside the image when it fits;
/// a patch larger than the image starts at 0 and is zero-padded at the end.
pub fn draw_corner(extents: &[usize], size: &[usize], foreground: &[usize], policy: LabelPolicy, rng: &mut Rng) -> Draw {
    let d = extents.len();
    let max_corner: Vec<i64> = extents.iter().zip(size).map(|(&e, &s)| (e as i64 - s as i64).max(0)).collect();
    let centred = match policy {
        LabelPolicy::Uniform => None,
        LabelPolicy::ForegroundBiased(ratio) => Some(rng.uniform() < ratio),
    };
    let fell_back = centred == Some(true) && foreground.is_empty();
    let corner = if centred == Some(true) && !foreground.is_empty() {
        let v = foreground[rng.below(foreground.len() as u64) as usize];
        let mut idx = vec![0; d];
        unravel(v, extents, &mut idx);
        (0..d).map(|a| (idx[a] as i64 - size[a] as i64 / 2).clamp(0, max_corner[a])).collect()
    } else {
        max_corner.iter().map(|&m| rng.below(m as u64 + 1) as i64).collect()
    };
    Draw { corner, fell_back }
}

/// One unit of queue work: which subject to sample and the stream seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Job {
    pub subject: usize,
    pub index: u64,
    pub seed: u64,
}

/// The `subjects * samples_per_volume` jobs of one epoch, optionally
/// shuffled. Every job carries its own derived seed, so the produced patches
/// do not depend on which worker runs them.
pub fn epoch_jobs(subjects: usize, samples_per_volume: usize, shuffle: bool, seed: u64, epoch: u64) -> Vec<Job> {
    let epoch_seed = Rng::for_item(seed, epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64();
    let mut jobs: Vec<Job> = (0..subjects * samples_per_volume)
        .map(|k| Job {
            subject: k / samples_per_volume,
            index: k as u64,
            seed: Rng::for_item(epoch_seed, k as u64).next_u64(),
        })
        .collect();
    if shuffle {
        Rng::new(epoch_seed).shuffle(&mut jobs);
    }
    jobs
}
