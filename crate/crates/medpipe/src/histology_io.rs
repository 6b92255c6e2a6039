//! On-disk pyramid bundles and patch coordinate lists.
//!
//! A bundle is a directory holding `pyramid.txt` (`factor`, `tile` and
//! `levels` as `key = value` lines) plus one `level_<L>.mha` RGB image per
//! level, level 0 being the finest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use medpipe_core::histology::{Coord, TiledImage};

use crate::error::{IoContext, PipelineError, Result};
use crate::io::mha;

pub const INDEX: &str = "pyramid.txt";

pub fn write_bundle(dir: &Path, tiled: &TiledImage) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for l in 0..tiled.levels.len() {
        mha::write(&tiled.level_image(l)?, &dir.join(format!("level_{l}.mha")))?;
    }
    let index = format!("factor = {}\ntile = {}\nlevels = {}\n", tiled.factor, tiled.tile, tiled.levels.len());
    let path = dir.join(INDEX);
    fs::write(&path, index).at(&path)
}

pub fn read_bundle(dir: &Path) -> Result<TiledImage> {
    let path = dir.join(INDEX);
    let text = fs::read_to_string(&path).at(&path)?;
    let (mut factor, mut tile, mut levels) = (None, None, None);
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |m: String| PipelineError::Parse { path: path.clone(), line: i as u64 + 1, message: m };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let v: usize = v.trim().parse().map_err(|_| err(format!("{:?} is not a count", v.trim())))?;
        match k.trim() {
            "factor" => factor = Some(v),
            "tile" => tile = Some(v),
            "levels" => levels = Some(v),
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| PipelineError::format(&path, format!("missing `{k}`")));
    let (factor, tile, levels) = (need(factor, "factor")?, need(tile, "tile")?, need(levels, "levels")?);
    let images = (0..levels).map(|l| mha::read(&dir.join(format!("level_{l}.mha")))).collect::<Result<Vec<_>>>()?;
    Ok(TiledImage::from_levels(&images, factor, tile)?)
}

/// Coordinate list as CSV `x,y,tissue_fraction`.
pub fn write_coords(path: &Path, coords: &[Coord]) -> Result<()> {
    let mut out = String::from("x,y,tissue_fraction\n");
    for c in coords {
        writeln!(out, "{},{},{}", c.x, c.y, c.tissue_fraction).expect("writing to a String");
    }
    fs::write(path, out).at(path)
}

pub fn read_coords(path: &Path) -> Result<Vec<Coord>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("x,y,tissue_fraction") {
        return Err(PipelineError::format(path, "expected header x,y,tissue_fraction"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let err = || PipelineError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                message: format!("bad coordinate row {line:?}"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(err());
            }
            Ok(Coord {
                x: f[0].parse().map_err(|_| err())?,
                y: f[1].parse().map_err(|_| err())?,
                tissue_fraction: f[2].parse().map_err(|_| err())?,
            })
        })
        .collect()
}
