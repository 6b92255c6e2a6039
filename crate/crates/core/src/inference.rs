//! Sliding-window stitching, fold aggregation and evaluation metrics.

use alloc::{format, vec, vec::Vec};

use crate::image::{strides, unravel};
use crate::patch::{extract_patch, PadPolicy};
use crate::{Error, Image, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StitchMode {
    /// Mean of all patch outputs covering a voxel.
    Average,
    /// Each voxel taken from exactly one patch, the one whose centre region
    /// owns it.
    Crop,
}

/// Patch start offsets along one axis: stride `floor(patch * (1 - overlap))`
/// (at least 1), with the last patch clamped to end at the border.
pub fn patch_starts(extent: usize, patch: usize, overlap: f64) -> Vec<usize> {
    if patch >= extent {
        return vec![0];
    }
    let stride = ((patch as f64 * (1.0 - overlap)) as usize).max(1);
    let last = extent - patch;
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s < last).collect();
    out.push(last);
    out
}

/// Ownership boundaries for crop stitching: patch `i` owns
/// `[bounds[i], bounds[i + 1])`, split at the midpoint of each overlap.
pub fn crop_bounds(starts: &[usize], patch: usize, extent: usize) -> Vec<usize> {
    let mut b = vec![0];
    for w in starts.windows(2) {
        b.push((w[1] + w[0] + patch) / 2);
    }
    b.push(extent);
    b
}

/// Per-class probabilities accumulated over patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    pub map: Image,
    pub normalized: bool,
}

/// Per-voxel number of contributing patches.
#[derive(Clone, Debug, PartialEq)]
pub struct CountMap {
    pub extents: Vec<usize>,
    pub counts: Vec<Real>,
}

impl CountMap {
    pub fn total(&self) -> Real {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stitched {
    pub prediction: PredictionMap,
    pub counts: CountMap,
    pub patches: usize,
}

const STITCH_BATCH: usize = 8;

/// Run `predict` over a patch grid and stitch the per-class outputs.
///
/// `predict` maps a `[B, C, patch...]` batch to `[B, K, patch...]`.
/// Patches are forwarded in a fixed order and accumulated in that order,
/// so the result is bit-reproducible. A patch larger than the image along
/// an axis zero-pads the image up to the patch and crops the result back.
pub fn sliding_window(
    image: &Image,
    patch: &[usize],
    overlap: f64,
    mode: StitchMode,
    mut predict: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<Stitched> {
    let ext = image.extents().to_vec();
    let d = ext.len();
    if patch.len() != d {
        return Err(Error::dim(0, format!("patch {patch:?} for a {d}D image")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let padded_ext: Vec<usize> = ext.iter().zip(patch).map(|(&e, &p)| e.max(p)).collect();
    if padded_ext != ext {
        log::info!("image {ext:?} is smaller than patch {patch:?}; zero-padding to {padded_ext:?}");
    }
    let starts: Vec<Vec<usize>> = (0..d).map(|a| patch_starts(padded_ext[a], patch[a], overlap)).collect();
    let bounds: Vec<Vec<usize>> = (0..d).map(|a| crop_bounds(&starts[a], patch[a], padded_ext[a])).collect();
    let grid: Vec<usize> = starts.iter().map(|s| s.len()).collect();
    let n_patches: usize = grid.iter().product();

    let total: usize = padded_ext.iter().product();
    let pst = strides(&padded_ext);
    let pvol: usize = patch.iter().product();
    let mut acc: Vec<Real> = Vec::new();
    let mut counts = vec![0.0 as Real; total];
    let mut classes = 0;

    let mut gidx = vec![0; d];
    let mut pidx = vec![0; d];
    let mut k = 0;
    while k < n_patches {
        let batch_end = (k + STITCH_BATCH).min(n_patches);
        let mut corners = Vec::new();
        let mut inputs = Vec::new();
        for g in k..batch_end {
            unravel(g, &grid, &mut gidx);
            let corner: Vec<i64> = (0..d).map(|a| starts[a][gidx[a]] as i64).collect();
            inputs.push(extract_patch(image, &corner, patch, PadPolicy::Zero)?.to_tensor());
            corners.push(gidx.clone());
        }
        let out = predict(&Tensor::stack(&inputs, true)?)?;
        let expect_vol = pvol;
        if out.ndim() != d + 2 || out.shape()[0] != corners.len() || out.shape()[2..] != *patch {
            return Err(Error::dim(0, format!("predictor returned {:?} for patches of {patch:?}", out.shape())));
        }
        if classes == 0 {
            classes = out.shape()[1];
            acc = vec![0.0; classes * total];
        } else if out.shape()[1] != classes {
            return Err(Error::dim(1, "predictor changed its class count between batches"));
        }
        for (b, gi) in corners.iter().enumerate() {
            let item = &out.data()[b * classes * expect_vol..(b + 1) * classes * expect_vol];
            for v in 0..pvol {
                unravel(v, patch, &mut pidx);
                let mut off = 0;
                let mut keep = true;
                for a in 0..d {
                    let pos = starts[a][gi[a]] + pidx[a];
                    if mode == StitchMode::Crop && !(bounds[a][gi[a]]..bounds[a][gi[a] + 1]).contains(&pos) {
                        keep = false;
                        break;
                    }
                    off += pos * pst[a];
                }
                if !keep {
                    continue;
                }
                counts[off] += 1.0;
                for c in 0..classes {
                    acc[c * total + off] += item[c * pvol + v];
                }
            }
        }
        k = batch_end;
    }
    for c in 0..classes {
        for (v, &n) in acc[c * total..(c + 1) * total].iter_mut().zip(&counts) {
            if n > 0.0 {
                *v *= 1.0 / n;
            }
        }
    }
    let padded = Image::new(&padded_ext, classes, acc, image.geometry().clone())?;
    let counts_img = Image::new(&padded_ext, 1, counts, image.geometry().clone())?;
    let (map, counts) = if padded_ext != ext {
        let zero = vec![0; d];
        (
            crate::preprocess::crop_box(&padded, &zero, &ext)?,
            crate::preprocess::crop_box(&counts_img, &zero, &ext)?.into_values(),
        )
    } else {
        (padded, counts_img.into_values())
    };
    Ok(Stitched {
        prediction: PredictionMap { map, normalized: true },
        counts: CountMap { extents: ext, counts },
        patches: n_patches,
    })
}

/// Index of the largest channel at every voxel (first wins on ties).
pub fn argmax_labels(probs: &Image) -> Image {
    let n = probs.voxels();
    let values = (0..n)
        .map(|v| {
            let mut best = 0;
            for c in 1..probs.channels() {
                if probs.values()[c * n + v] > probs.values()[best * n + v] {
                    best = c;
                }
            }
            best as Real
        })
        .collect();
    probs.like(1, values).expect("same layout")
}

/// Label fusion: voxelwise mean of fold probability maps, then argmax.
/// Returns `(mean probabilities, labels)`.
pub fn aggregate_segmentation(maps: &[Image]) -> Result<(Image, Image)> {
    let first = maps.first().ok_or_else(|| Error::contract("no fold outputs to aggregate"))?;
    let mut sum = vec![0.0 as Real; first.values().len()];
    for m in maps {
        first.same_extents(m)?;
        if m.channels() != first.channels() {
            return Err(Error::dim(1, format!("{} vs {} classes", m.channels(), first.channels())));
        }
        sum.iter_mut().zip(m.values()).for_each(|(s, v)| *s += v);
    }
    let k = maps.len() as Real;
    sum.iter_mut().for_each(|s| *s /= k);
    let mean = first.like(first.channels(), sum)?;
    let labels = argmax_labels(&mean);
    Ok((mean, labels))
}

fn same_len(rows: &[Vec<Real>]) -> Result<usize> {
    let first = rows.first().ok_or_else(|| Error::contract("no fold outputs to aggregate"))?;
    if let Some(r) = rows.iter().find(|r| r.len() != first.len()) {
        return Err(Error::dim(0, format!("fold outputs of length {} and {}", first.len(), r.len())));
    }
    Ok(first.len())
}

/// Mean of the folds' scalar predictions.
pub fn aggregate_regression(values: &[Vec<Real>]) -> Result<Vec<Real>> {
    let n = same_len(values)?;
    Ok((0..n).map(|i| values.iter().map(|v| v[i]).sum::<Real>() / values.len() as Real).collect())
}

/// Majority vote over each fold's argmax class; ties go to the tied class
/// with the highest mean probability, then to the lowest index.
pub fn aggregate_classification(probs: &[Vec<Real>]) -> Result<usize> {
    let k = same_len(probs)?;
    if k == 0 {
        return Err(Error::dim(0, "empty class probability vectors"));
    }
    let mut votes = vec![0usize; k];
    for p in probs {
        let best = (0..k).fold(0, |b, c| if p[c] > p[b] { c } else { b });
        votes[best] += 1;
    }
    let mean = aggregate_regression(probs)?;
    let top = *votes.iter().max().expect("k > 0");
    let winner = (0..k)
        .filter(|&c| votes[c] == top)
        .fold(None, |best: Option<usize>, c| match best {
            Some(b) if mean[b] >= mean[c] => Some(b),
            _ => Some(c),
        })
        .expect("at least one class has the top vote");
    Ok(winner)
}

/// Dice of the voxels labelled `class` in each mask. Two empty sets agree
/// perfectly (1).
pub fn dice_class(pred: &Image, gt: &Image, class: Real) -> Result<Real> {
    pred.same_extents(gt)?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.channel(0).iter().zip(gt.channel(0)) {
        let (x, y) = (p == class, g == class);
        inter += usize::from(x && y);
        a += usize::from(x);
        b += usize::from(y);
    }
    Ok(if a + b == 0 { 1.0 } else { 2.0 * inter as Real / (a + b) as Real })
}

/// Dice per foreground class `1..classes`, and their mean.
pub fn dice_per_class(pred: &Image, gt: &Image, classes: usize) -> Result<(Vec<Real>, Real)> {
    let per: Vec<Real> = (1..classes.max(2)).map(|c| dice_class(pred, gt, c as Real)).collect::<Result<_>>()?;
    let mean = per.iter().sum::<Real>() / per.len() as Real;
    Ok((per, mean))
}

pub fn mse(pred: &[Real], target: &[Real]) -> Result<Real> {
    if pred.len() != target.len() {
        return Err(Error::dim(0, format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::dim(0, "mse of zero elements"));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<Real>() / pred.len() as Real)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_cover_and_clamp() {
        assert_eq!(patch_starts(10, 4, 0.0), vec![0, 4, 6]);
        assert_eq!(patch_starts(10, 4, 0.5), vec![0, 2, 4, 6]);
        assert_eq!(patch_starts(3, 4, 0.5), vec![0]);
        assert_eq!(crop_bounds(&[0, 4, 6], 4, 10), vec![0, 4, 7, 10]);
    }

    #[test]
    fn dice_fixture() {
        let pred = Image::from_fn(&[4, 4], |i| if i[0] < 2 && i[1] < 2 { 1.0 } else { 0.0 });
        let gt = Image::from_fn(&[4, 4], |i| if i[0] < 2 && i[1] < 3 { 1.0 } else { 0.0 });
        assert_eq!(dice_class(&pred, &gt, 1.0).unwrap(), 0.8);
        let empty = Image::zeros(&[4, 4], 1);
        assert_eq!(dice_class(&empty, &empty, 1.0).unwrap(), 1.0);
        assert_eq!(dice_class(&pred, &empty, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn votes_and_means() {
        let a = vec![0.9, 0.1];
        let b = vec![0.2, 0.8];
        assert_eq!(aggregate_classification(&[a.clone(), a.clone(), b.clone()]).unwrap(), 0);
        assert_eq!(aggregate_classification(&[vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap(), 1);
        assert_eq!(aggregate_regression(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(), vec![2.0]);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn constant_model_stitches_constant() {
        let img = Image::from_fn(&[10, 7], |i| i[0] as Real);
        for mode in [StitchMode::Average, StitchMode::Crop] {
            let s = sliding_window(&img, &[4, 4], 0.5, mode, |x| {
                let mut shape = x.shape().to_vec();
                shape[1] = 2;
                Ok(Tensor::full(&shape, 0.25))
            })
            .unwrap();
            assert!(s.prediction.map.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
            if mode == StitchMode::Crop {
                assert!(s.counts.counts.iter().all(|&c| c == 1.0));
            } else {
                assert_eq!(s.counts.total() as usize, s.patches * 16);
            }
        }
    }
}
