//! Whole-slide style processing at desk scale: a tiled RGB pyramid, Otsu
//! tissue masking, pseudo-grid patch mining and count-normalised tiled
//! inference.
//!
//! Slides are 2D images with extents `[rows, cols]` and three channels
//! holding 0..=255 intensities. Patch coordinates use `x` for the column
//! and `y` for the row.

use alloc::{format, vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::inference::patch_starts;
use crate::{Error, Geometry, Image, Real, Result, Tensor};

/// Channel minimum above which a pixel counts as background glass.
pub const WHITE_CUTOFF: Real = 240.0;

/// One pyramid level stored as row-major tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub extents: [usize; 2],
    tile_grid: [usize; 2],
    /// Tile `(ty, tx)` holds channel-major `[3, th, tw]` values.
    tiles: Vec<Vec<Real>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiledImage {
    pub levels: Vec<Level>,
    pub factor: usize,
    pub tile: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn check_rgb(image: &Image) -> Result<()> {
    if image.dims() != 2 || image.channels() != 3 {
        return Err(Error::dim(
            0,
            format!("expected a 2D RGB image, got {}D with {} channel(s)", image.dims(), image.channels()),
        ));
    }
    Ok(())
}

/// Box-filter downsample by `f`; edge blocks average the pixels they have.
pub fn box_downsample(image: &Image, f: usize) -> Image {
    let ext = image.extents();
    let (h, w) = (ext[0], ext[1]);
    let (nh, nw) = (ceil_div(h, f), ceil_div(w, f));
    let mut values = Vec::with_capacity(image.channels() * nh * nw);
    for c in 0..image.channels() {
        let ch = image.channel(c);
        for i in 0..nh {
            for j in 0..nw {
                let (r0, r1) = (i * f, ((i + 1) * f).min(h));
                let (c0, c1) = (j * f, ((j + 1) * f).min(w));
                let mut s = 0.0;
                for r in r0..r1 {
                    s += ch[r * w + c0..r * w + c1].iter().sum::<Real>();
                }
                values.push(s / ((r1 - r0) * (c1 - c0)) as Real);
            }
        }
    }
    let g = image.geometry();
    let geometry = Geometry {
        spacing: g.spacing.iter().map(|s| s * f as f64).collect(),
        origin: g.origin.clone(),
    };
    Image::new(&[nh, nw], image.channels(), values, geometry).expect("consistent layout")
}

impl Level {
    fn from_image(image: &Image, tile: usize) -> Self {
        let ext = [image.extents()[0], image.extents()[1]];
        let grid = [ceil_div(ext[0], tile), ceil_div(ext[1], tile)];
        let mut tiles = Vec::with_capacity(grid[0] * grid[1]);
        for ty in 0..grid[0] {
            for tx in 0..grid[1] {
                let (r0, r1) = (ty * tile, ((ty + 1) * tile).min(ext[0]));
                let (c0, c1) = (tx * tile, ((tx + 1) * tile).min(ext[1]));
                let mut t = Vec::with_capacity(3 * (r1 - r0) * (c1 - c0));
                for c in 0..3 {
                    let ch = image.channel(c);
                    for r in r0..r1 {
                        t.extend_from_slice(&ch[r * ext[1] + c0..r * ext[1] + c1]);
                    }
                }
                tiles.push(t);
            }
        }
        Self { extents: ext, tile_grid: grid, tiles }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }
}

/// Build `levels` levels, each the box-filter downsample of the previous.
pub fn build_tiled_pyramid(image: &Image, levels: usize, factor: usize, tile: usize) -> Result<TiledImage> {
    check_rgb(image)?;
    if factor < 2 {
        return Err(Error::config(format!("pyramid factor must be at least 2, got {factor}")));
    }
    if levels == 0 || tile == 0 {
        return Err(Error::config("pyramid needs at least one level and a positive tile size"));
    }
    let mut out = Vec::with_capacity(levels);
    let mut cur = image.clone();
    for l in 0..levels {
        if l > 0 {
            cur = box_downsample(&cur, factor);
        }
        out.push(Level::from_image(&cur, tile));
    }
    Ok(TiledImage { levels: out, factor, tile })
}

impl TiledImage {
    /// Reassemble a pyramid from per-level images (level 0 first). Each
    /// level's extents must be the ceiling division of the previous one.
    pub fn from_levels(images: &[Image], factor: usize, tile: usize) -> Result<Self> {
        if factor < 2 || tile == 0 || images.is_empty() {
            return Err(Error::config("pyramid needs factor >= 2, a positive tile size and at least one level"));
        }
        for (l, img) in images.iter().enumerate() {
            check_rgb(img)?;
            if l > 0 {
                let prev = images[l - 1].extents();
                for axis in 0..2 {
                    if img.extents()[axis] != ceil_div(prev[axis], factor) {
                        return Err(Error::dim(
                            axis,
                            format!("level {l} extents {:?} do not follow {prev:?} at factor {factor}", img.extents()),
                        ));
                    }
                }
            }
        }
        Ok(Self { levels: images.iter().map(|i| Level::from_image(i, tile)).collect(), factor, tile })
    }

    pub fn level(&self, level: usize) -> Result<&Level> {
        self.levels
            .get(level)
            .ok_or_else(|| Error::config(format!("level {level} requested from a {}-level pyramid", self.levels.len())))
    }

    /// Downsample of `level` relative to level 0.
    pub fn scale(&self, level: usize) -> usize {
        self.factor.pow(level as u32)
    }

    /// Read rows `[y, y + h)` and columns `[x, x + w)` of a level, touching
    /// only the tiles that intersect it. Returns the region and the number
    /// of tiles read.
    pub fn read_region(&self, level: usize, y: usize, x: usize, h: usize, w: usize) -> Result<(Image, usize)> {
        let lv = self.level(level)?;
        if h == 0 || w == 0 || y + h > lv.extents[0] || x + w > lv.extents[1] {
            return Err(Error::contract(format!(
                "region rows {y}+{h}, cols {x}+{w} outside level {level} of {:?}",
                lv.extents
            )));
        }
        let t = self.tile;
        let mut values = vec![0.0; 3 * h * w];
        let mut touched = 0;
        for ty in y / t..=(y + h - 1) / t {
            for tx in x / t..=(x + w - 1) / t {
                touched += 1;
                let tile = &lv.tiles[ty * lv.tile_grid[1] + tx];
                let (r0, c0) = (ty * t, tx * t);
                let th = (r0 + t).min(lv.extents[0]) - r0;
                let tw = (c0 + t).min(lv.extents[1]) - c0;
                for c in 0..3 {
                    for r in r0.max(y)..(r0 + th).min(y + h) {
                        for col in c0.max(x)..(c0 + tw).min(x + w) {
                            values[c * h * w + (r - y) * w + (col - x)] = tile[c * th * tw + (r - r0) * tw + (col - c0)];
                        }
                    }
                }
            }
        }
        Ok((Image::new(&[h, w], 3, values, Geometry::unit(2))?, touched))
    }

    pub fn level_image(&self, level: usize) -> Result<Image> {
        let e = self.level(level)?.extents;
        Ok(self.read_region(level, 0, 0, e[0], e[1])?.0)
    }
}

/// Luma `0.299 R + 0.587 G + 0.114 B` per pixel.
pub fn grayscale(rgb: &Image) -> Result<Vec<Real>> {
    check_rgb(rgb)?;
    let (r, g, b) = (rgb.channel(0), rgb.channel(1), rgb.channel(2));
    Ok((0..rgb.voxels()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect())
}

/// 256-bin histogram of gray values rounded and clamped to `0..=255`.
pub fn histogram(gray: &[Real]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &g in gray {
        h[bin(g)] += 1;
    }
    h
}

fn bin(g: Real) -> usize {
    g.round().clamp(0.0, 255.0) as usize
}

/// Otsu threshold: the cut `t` (class 0 = bins `0..=t`, `t < 255`)
/// maximising between-class variance, lowest `t` on ties.
///
/// Scores are compared exactly. With `N` pixels, intensity sum `S`, and
/// `n0`, `S0` the count and sum at or below the cut, the between-class
/// variance is proportional to `(N S0 - n0 S)^2 / (n0 n1)`.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<(usize, u128, u128)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        n0 += count as u128;
        s0 += t as u128 * count as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (n * s0).abs_diff(n0 * s);
        let num = diff * diff;
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => greater(num, den, bn, bd),
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.map(|(t, _, _)| t as u8)
        .ok_or_else(|| Error::degenerate("all pixels share one intensity; no Otsu threshold exists"))
}

/// `a / b > c / d` for positive denominators.
fn greater(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(x), Some(y)) => x > y,
        _ => (a as f64 / b as f64) > (c as f64 / d as f64),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TissueMask {
    pub level: usize,
    /// Downsample of the mask level relative to level 0.
    pub scale: usize,
    pub extents: [usize; 2],
    pub level0_extents: [usize; 2],
    pub mask: Vec<bool>,
    /// Otsu cut used, if any pixel survived the near-white rule.
    pub threshold: Option<u8>,
}

impl TissueMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Tissue = gray at or below the Otsu cut, excluding near-white pixels
/// (every channel above [`WHITE_CUTOFF`]). A region that is entirely
/// near-white yields an empty mask.
pub fn tissue_mask(tiled: &TiledImage, level: usize) -> Result<TissueMask> {
    let img = tiled.level_image(level)?;
    let gray = grayscale(&img)?;
    let n = img.voxels();
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    let not_white: Vec<bool> = (0..n).map(|i| r[i].min(g[i]).min(b[i]) <= WHITE_CUTOFF).collect();
    let e = tiled.levels[level].extents;
    let base = TissueMask {
        level,
        scale: tiled.scale(level),
        extents: e,
        level0_extents: tiled.levels[0].extents,
        mask: vec![false; n],
        threshold: None,
    };
    if !not_white.iter().any(|&k| k) {
        log::info!("level {level} is entirely near-white; tissue mask is empty");
        return Ok(base);
    }
    let t = otsu_threshold(&histogram(&gray))?;
    let mask = gray.iter().zip(&not_white).map(|(&v, &k)| k && bin(v) <= t as usize).collect();
    Ok(TissueMask { mask, threshold: Some(t), ..base })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
    pub tissue_fraction: Real,
}

/// Fraction of mask pixels set inside a level-0 square patch.
pub fn tissue_fraction(mask: &TissueMask, y: usize, x: usize, patch: usize) -> Real {
    let s = mask.scale;
    let (r0, r1) = (y / s, ceil_div(y + patch, s).min(mask.extents[0]));
    let (c0, c1) = (x / s, ceil_div(x + patch, s).min(mask.extents[1]));
    if r1 <= r0 || c1 <= c0 {
        return 0.0;
    }
    let mut hit = 0usize;
    for r in r0..r1 {
        hit += mask.mask[r * mask.extents[1] + c0..r * mask.extents[1] + c1].iter().filter(|&&m| m).count();
    }
    hit as Real / ((r1 - r0) * (c1 - c0)) as Real
}

/// Pseudo-grid mining: level-0 positions every `patch * (1 - overlap)`
/// pixels with the patch fully inside, kept when the tissue fraction is at
/// least `min_fraction`. Row-major order.
pub fn mine_patches(mask: &TissueMask, patch: usize, overlap: f64, min_fraction: Real) -> Result<Vec<Coord>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    if patch == 0 {
        return Err(Error::config("patch size must be positive"));
    }
    if mask.count() == 0 {
        log::info!("tissue mask is empty; no patches mined");
    }
    let stride = ((patch as f64 * (1.0 - overlap)) as usize).max(1);
    let [h, w] = mask.level0_extents;
    let mut out = Vec::new();
    let mut y = 0;
    while y + patch <= h {
        let mut x = 0;
        while x + patch <= w {
            let f = tissue_fraction(mask, y, x, patch);
            if f >= min_fraction {
                out.push(Coord { x, y, tissue_fraction: f });
            }
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

/// Output of tiled inference at level 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TiledPrediction {
    /// Argmax class per pixel (0 where uncovered).
    pub labels: Image,
    /// Averaged class probabilities.
    pub probabilities: Image,
    /// `1 / coverage` per pixel, 0 where no patch landed.
    pub reciprocal_counts: Vec<Real>,
    pub covered: Vec<bool>,
}

/// Forward every mined patch (RGB scaled to `[0, 1]`), accumulate the class
/// probabilities and coverage, and multiply the sums by the reciprocal
/// coverage.
pub fn tiled_infer(
    tiled: &TiledImage,
    coords: &[Coord],
    patch: usize,
    mut predict: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<TiledPrediction> {
    let [h, w] = tiled.levels[0].extents;
    for c in coords {
        if c.x + patch > w || c.y + patch > h {
            return Err(Error::contract(format!(
                "patch at x={}, y={} of size {patch} leaves the {h}x{w} slide",
                c.x, c.y
            )));
        }
    }
    let n = h * w;
    let mut acc: Vec<Real> = Vec::new();
    let mut counts = vec![0u32; n];
    let mut classes = 0;
    let pv = patch * patch;
    for chunk in coords.chunks(8) {
        let inputs = chunk
            .iter()
            .map(|c| Ok(tiled.read_region(0, c.y, c.x, patch, patch)?.0.map(|v| v / 255.0).to_tensor()))
            .collect::<Result<Vec<_>>>()?;
        let out = predict(&Tensor::stack(&inputs, true)?)?;
        if out.ndim() != 4 || out.shape()[0] != chunk.len() || out.shape()[2..] != [patch, patch] {
            return Err(Error::dim(0, format!("predictor returned {:?} for {patch}x{patch} patches", out.shape())));
        }
        if classes == 0 {
            classes = out.shape()[1];
            acc = vec![0.0; classes * n];
        }
        for (b, c) in chunk.iter().enumerate() {
            let item = &out.data()[b * classes * pv..(b + 1) * classes * pv];
            for r in 0..patch {
                for col in 0..patch {
                    let off = (c.y + r) * w + c.x + col;
                    counts[off] += 1;
                    for k in 0..classes {
                        acc[k * n + off] += item[k * pv + r * patch + col];
                    }
                }
            }
        }
    }
    let classes = classes.max(1);
    if acc.is_empty() {
        acc = vec![0.0; classes * n];
    }
    let reciprocal: Vec<Real> = counts.iter().map(|&c| if c > 0 { 1.0 / c as Real } else { 0.0 }).collect();
    for k in 0..classes {
        acc[k * n..(k + 1) * n].iter_mut().zip(&reciprocal).for_each(|(v, r)| *v *= r);
    }
    let probabilities = Image::new(&[h, w], classes, acc, Geometry::unit(2))?;
    let labels = crate::inference::argmax_labels(&probabilities);
    Ok(TiledPrediction {
        labels,
        probabilities,
        reciprocal_counts: reciprocal,
        covered: counts.iter().map(|&c| c > 0).collect(),
    })
}

/// Level-0 grid covering the whole slide, for full-coverage inference.
pub fn full_grid(tiled: &TiledImage, patch: usize, overlap: f64) -> Vec<Coord> {
    let [h, w] = tiled.levels[0].extents;
    let mut out = Vec::new();
    for &y in &patch_starts(h, patch, overlap) {
        for &x in &patch_starts(w, patch, overlap) {
            out.push(Coord { x, y, tissue_fraction: 1.0 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(h: usize, w: usize, f: impl Fn(usize, usize) -> Real) -> Image {
        let mut v = Vec::new();
        for _ in 0..3 {
            for r in 0..h {
                for c in 0..w {
                    v.push(f(r, c));
                }
            }
        }
        Image::new(&[h, w], 3, v, Geometry::unit(2)).unwrap()
    }

    #[test]
    fn constant_pyramid() {
        let p = build_tiled_pyramid(&rgb(8, 8, |_, _| 7.0), 3, 2, 3).unwrap();
        let ext: Vec<_> = p.levels.iter().map(|l| l.extents).collect();
        assert_eq!(ext, vec![[8, 8], [4, 4], [2, 2]]);
        for l in 0..3 {
            assert!(p.level_image(l).unwrap().values().iter().all(|&v| v == 7.0));
        }
        assert!(build_tiled_pyramid(&rgb(8, 8, |_, _| 0.0), 2, 1, 4).is_err());
    }

    #[test]
    fn region_reads_only_needed_tiles() {
        let img = rgb(10, 10, |r, c| (r * 10 + c) as Real);
        let p = build_tiled_pyramid(&img, 1, 2, 4).unwrap();
        let (reg, touched) = p.read_region(0, 5, 5, 2, 2).unwrap();
        assert_eq!(touched, 1);
        assert_eq!(&reg.values()[..4], &[55.0, 56.0, 65.0, 66.0]);
        assert_eq!(p.read_region(0, 3, 3, 2, 2).unwrap().1, 4);
    }

    #[test]
    fn half_black_half_white() {
        let p = build_tiled_pyramid(&rgb(4, 4, |_, c| if c < 2 { 0.0 } else { 255.0 }), 1, 2, 4).unwrap();
        let m = tissue_mask(&p, 0).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m.mask[r * 4 + c], c < 2);
            }
        }
        let white = build_tiled_pyramid(&rgb(4, 4, |_, _| 250.0), 1, 2, 4).unwrap();
        assert_eq!(tissue_mask(&white, 0).unwrap().count(), 0);
        let flat = build_tiled_pyramid(&rgb(4, 4, |_, _| 100.0), 1, 2, 4).unwrap();
        assert!(matches!(tissue_mask(&flat, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn full_tissue_tiles_exactly() {
        let p = build_tiled_pyramid(&rgb(10, 13, |r, c| if (r + c) % 2 == 0 { 0.0 } else { 10.0 }), 1, 2, 4).unwrap();
        let mut m = tissue_mask(&p, 0).unwrap();
        m.mask.iter_mut().for_each(|v| *v = true);
        let coords = mine_patches(&m, 4, 0.0, 1.0).unwrap();
        assert_eq!(coords.len(), (10 / 4) * (13 / 4));
    }
}
