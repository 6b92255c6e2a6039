//! Seeded synthetic datasets with ground truth known by construction.

use std::fs;
use std::path::{Path, PathBuf};

use medpipe_core::{Geometry, Image, Real, Rng};

use crate::error::{IoContext, Result};
use crate::io::{mha, write_manifest, SubjectRecord, Target};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    /// Random ellipse fully inside a `size` x `size` image.
    pub fn random(size: usize, rng: &mut Rng) -> Self {
        let s = size as f64;
        let ry = rng.range(0.1 * s, 0.25 * s);
        let rx = rng.range(0.1 * s, 0.25 * s);
        let r = ry.max(rx);
        Ellipse {
            cy: rng.range(r + 1.0, s - r - 1.0),
            cx: rng.range(r + 1.0, s - r - 1.0),
            ry,
            rx,
            angle: rng.range(0.0, std::f64::consts::PI),
        }
    }

    pub fn mask(&self, extents: [usize; 2]) -> Image {
        Image::from_fn(&extents, |i| Real::from(u8::from(self.contains(i[0] as f64, i[1] as f64))))
    }
}

/// One segmentation subject: a bright noisy ellipse on a darker noisy
/// background, with its exact mask.
pub fn ellipse_subject(size: usize, rng: &mut Rng) -> (Image, Image) {
    let e = Ellipse::random(size, rng);
    let mask = e.mask([size, size]);
    let fg = rng.range(0.6, 0.9);
    let bg = rng.range(0.1, 0.3);
    let image = Image::from_fn(&[size, size], |i| {
        let inside = mask.values()[i[0] * size + i[1]] != 0.0;
        (if inside { fg } else { bg }) + rng.normal(0.0, 0.05)
    });
    (image, mask)
}

/// One regression subject: a noisy image whose target is its own mean
/// intensity.
pub fn intensity_subject(size: usize, rng: &mut Rng) -> (Image, f64) {
    let level = rng.range(0.0, 1.0);
    let amp = rng.range(-0.2, 0.2);
    let (cy, cx) = (rng.range(0.0, size as f64), rng.range(0.0, size as f64));
    let sigma = size as f64 / 6.0;
    let image = Image::from_fn(&[size, size], |i| {
        let d2 = (i[0] as f64 - cy).powi(2) + (i[1] as f64 - cx).powi(2);
        level + amp * (-d2 / (2.0 * sigma * sigma)).exp() + rng.normal(0.0, 0.05)
    });
    let mean = image.values().iter().sum::<Real>() / image.voxels() as Real;
    (image, mean)
}

/// RGB slide: a dark stained ellipse on a near-white background, and the
/// ellipse mask.
pub fn slide(size: usize, rng: &mut Rng) -> (Image, Image) {
    let s = size as f64;
    let blob = Ellipse { cy: 0.5 * s, cx: 0.5 * s, ry: 0.3 * s, rx: 0.2 * s, angle: rng.range(0.0, 1.0) };
    let mask = blob.mask([size, size]);
    let tissue = [160.0, 90.0, 170.0];
    let n = size * size;
    let mut values = vec![0.0; 3 * n];
    for v in 0..n {
        let inside = mask.values()[v] != 0.0;
        for c in 0..3 {
            values[c * n + v] = if inside {
                (tissue[c] + rng.range(-15.0, 15.0)).round()
            } else {
                rng.range(243.0, 255.0).round()
            };
        }
    }
    let image = Image::new(&[size, size], 3, values, Geometry::unit(2)).expect("consistent slide buffer");
    (image, mask)
}

fn subject_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}_image.mha")), dir.join(format!("{id}_mask.mha")))
}

/// Write `n` ellipse subjects and `manifest.csv` under `dir`; returns the
/// manifest path.
pub fn write_segmentation_dataset(dir: &Path, n: usize, size: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let id = format!("sub{k:03}");
        let (image, mask) = ellipse_subject(size, &mut Rng::for_item(seed, k as u64));
        let (ip, mp) = subject_paths(dir, &id);
        mha::write(&image, &ip)?;
        mha::write(&mask, &mp)?;
        records.push(SubjectRecord { subject_id: id, channel_paths: vec![ip], target: Target::Mask(mp) });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// Write `n` mean-intensity regression subjects and `manifest.csv`.
pub fn write_regression_dataset(dir: &Path, n: usize, size: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let id = format!("sub{k:03}");
        let (image, target) = intensity_subject(size, &mut Rng::for_item(seed, k as u64));
        let (ip, _) = subject_paths(dir, &id);
        mha::write(&image, &ip)?;
        records.push(SubjectRecord { subject_id: id, channel_paths: vec![ip], target: Target::Value(target) });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_stays_inside_and_is_nonempty() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let (image, mask) = ellipse_subject(32, &mut rng);
            let area: Real = mask.values().iter().sum();
            assert!(area > 10.0);
            let border = (0..32).any(|i| mask.values()[i] != 0.0 || mask.values()[i * 32] != 0.0);
            assert!(!border);
            assert_eq!(image.extents(), &[32, 32]);
        }
    }

    #[test]
    fn regression_target_is_image_mean() {
        let (image, t) = intensity_subject(16, &mut Rng::new(9));
        let mean = image.values().iter().sum::<Real>() / 256.0;
        assert_eq!(mean, t);
    }
}
