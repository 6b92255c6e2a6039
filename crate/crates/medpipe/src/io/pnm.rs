//! Binary PNM: `P5` grayscale and `P6` RGB, 8- or 16-bit samples. Samples
//! are read as plain numbers `0..=maxval`; nothing is rescaled.

use std::path::Path;

use medpipe_core::{Geometry, Image, Real};

use crate::error::{IoContext, PipelineError, Result};

fn header_err(path: &Path, offset: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Header { path: path.to_path_buf(), offset, message: message.into() }
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token<'a>(path: &Path, bytes: &'a [u8], pos: &mut usize) -> Result<(&'a str, usize)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(header_err(path, start, "header ended early"));
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| header_err(path, start, "non-ASCII header"))?;
    Ok((s, start))
}

fn number(path: &Path, bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let (t, at) = token(path, bytes, pos)?;
    t.parse().map_err(|_| header_err(path, at, format!("{what}: expected a number, got {t:?}")))
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).at(path)?;
    decode(path, &bytes)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let (magic, _) = token(path, bytes, &mut pos)?;
    let channels = match magic {
        "P5" => 1,
        "P6" => 3,
        other => return Err(PipelineError::format(path, format!("unsupported PNM variant {other:?}; use P5 or P6"))),
    };
    let w = number(path, bytes, &mut pos, "width")?;
    let h = number(path, bytes, &mut pos, "height")?;
    let maxval_at = pos;
    let maxval = number(path, bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(header_err(path, maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let width = if maxval > 255 { 2 } else { 1 };
    let n = w * h;
    let need = n * channels * width;
    if bytes.len() < pos + need {
        return Err(header_err(path, pos, format!("payload holds {} bytes, header implies {need}", bytes.len().saturating_sub(pos))));
    }
    let mut values = vec![0.0 as Real; n * channels];
    for k in 0..n * channels {
        let at = pos + k * width;
        let v = if width == 2 { u16::from_be_bytes([bytes[at], bytes[at + 1]]) as Real } else { bytes[at] as Real };
        values[(k % channels) * n + k / channels] = v;
    }
    Ok(Image::new(&[h, w], channels, values, Geometry::unit(2))?)
}

pub fn encode(path: &Path, image: &Image) -> Result<Vec<u8>> {
    if image.dims() != 2 || !(image.channels() == 1 || image.channels() == 3) {
        return Err(PipelineError::format(
            path,
            format!("PNM holds 2D gray or RGB images, got {}D with {} channel(s)", image.dims(), image.channels()),
        ));
    }
    let integral = image.values().iter().all(|&v| v.fract() == 0.0 && (0.0..=65535.0).contains(&v));
    if !integral {
        return Err(PipelineError::format(path, "PNM samples must be integers in 0..=65535"));
    }
    let maxval = if image.values().iter().all(|&v| v <= 255.0) { 255 } else { 65535 };
    let (h, w) = (image.extents()[0], image.extents()[1]);
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    let n = w * h;
    for v in 0..n {
        for c in 0..image.channels() {
            let s = image.values()[c * n + v] as u16;
            if maxval == 255 {
                out.push(s as u8);
            } else {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write(image: &Image, path: &Path) -> Result<()> {
    let bytes = encode(path, image)?;
    std::fs::write(path, bytes).at(path)
}

/// Map an image linearly onto `0..=255` for viewing.
pub fn to_display(image: &Image) -> Image {
    let (lo, hi) = image.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    image.map(|v| ((v - lo) / span * 255.0).round())
}
