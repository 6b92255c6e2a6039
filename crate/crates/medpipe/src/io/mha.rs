//! MetaImage (`.mha`): a `Key = Value` text header ending with
//! `ElementDataFile = LOCAL`, followed by the raw voxel buffer.
//!
//! MetaImage lists axes fastest-first, so `DimSize`, `ElementSpacing` and
//! `Offset` are the reverse of the in-memory extents. Multi-channel voxels
//! are interleaved in the file.

use std::path::Path;

use medpipe_core::{Geometry, Image, Real};

use crate::error::{IoContext, PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ElementType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl ElementType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_CHAR" => Self::I8,
            "MET_UCHAR" => Self::U8,
            "MET_SHORT" => Self::I16,
            "MET_USHORT" => Self::U16,
            "MET_INT" => Self::I32,
            "MET_UINT" => Self::U32,
            "MET_LONG_LONG" => Self::I64,
            "MET_ULONG_LONG" => Self::U64,
            "MET_FLOAT" => Self::F32,
            "MET_DOUBLE" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::I64 | Self::U64 | Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b.try_into().expect("element width");
                (if big_endian { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::I64 => num!(i64, 8),
            Self::U64 => num!(u64, 8),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }
}

fn header_err(path: &Path, offset: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Header { path: path.to_path_buf(), offset, message: message.into() }
}

fn parse_list<T: std::str::FromStr>(path: &Path, offset: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| header_err(path, offset, format!("{key}: cannot parse {t:?}"))))
        .collect()
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).at(path)?;
    decode(path, &bytes)
}

/// Parse an in-memory `.mha` file; `path` is used for messages only.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut ndims: Option<(usize, usize)> = None;
    let mut dim_size: Option<(Vec<usize>, usize)> = None;
    let mut spacing: Option<(Vec<f64>, usize)> = None;
    let mut offset: Option<(Vec<f64>, usize)> = None;
    let mut channels = 1usize;
    let mut etype: Option<ElementType> = None;
    let mut big_endian = false;
    let data_start = loop {
        if pos >= bytes.len() {
            return Err(header_err(path, pos, "header ended without ElementDataFile"));
        }
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| header_err(path, pos, "header line is not valid UTF-8"))?
            .trim_end_matches('\r');
        let line_start = pos;
        pos = (end + 1).min(bytes.len());
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| header_err(path, line_start, format!("expected `Key = Value`, got {line:?}")))?;
        match key {
            "NDims" => {
                let n = value.parse().map_err(|_| header_err(path, line_start, format!("NDims: cannot parse {value:?}")))?;
                ndims = Some((n, line_start));
            }
            "DimSize" => dim_size = Some((parse_list(path, line_start, key, value)?, line_start)),
            "ElementSpacing" | "ElementSize" => spacing = Some((parse_list(path, line_start, key, value)?, line_start)),
            "Offset" | "Origin" | "Position" => offset = Some((parse_list(path, line_start, key, value)?, line_start)),
            "ElementNumberOfChannels" => {
                channels = value
                    .parse()
                    .map_err(|_| header_err(path, line_start, format!("ElementNumberOfChannels: cannot parse {value:?}")))?;
            }
            "ElementType" => {
                etype = Some(ElementType::parse(value).ok_or_else(|| {
                    PipelineError::format(path, format!("unsupported pixel type {value}"))
                })?);
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => big_endian = value.eq_ignore_ascii_case("true"),
            "CompressedData" if value.eq_ignore_ascii_case("true") => {
                return Err(PipelineError::format(path, "compressed payloads are not supported"));
            }
            "BinaryData" if !value.eq_ignore_ascii_case("true") => {
                return Err(PipelineError::format(path, "ASCII payloads are not supported"));
            }
            "ElementDataFile" => {
                if value != "LOCAL" {
                    return Err(PipelineError::format(path, format!("external data file {value:?} is not supported")));
                }
                break pos;
            }
            _ => {}
        }
    };
    let (n, n_at) = ndims.ok_or_else(|| header_err(path, 0, "missing NDims"))?;
    let (dims, d_at) = dim_size.ok_or_else(|| header_err(path, 0, "missing DimSize"))?;
    if n == 0 || dims.len() != n {
        return Err(header_err(path, d_at.max(n_at), format!("DimSize has {} entries for NDims {n}", dims.len())));
    }
    let spacing = match spacing {
        Some((s, at)) if s.len() != n => return Err(header_err(path, at, format!("ElementSpacing has {} entries", s.len()))),
        Some((s, _)) => s,
        None => vec![1.0; n],
    };
    let origin = match offset {
        Some((o, at)) if o.len() != n => return Err(header_err(path, at, format!("Offset has {} entries", o.len()))),
        Some((o, _)) => o,
        None => vec![0.0; n],
    };
    let etype = etype.ok_or_else(|| header_err(path, 0, "missing ElementType"))?;
    let voxels: usize = dims.iter().product();
    let need = voxels * channels * etype.size();
    let payload = &bytes[data_start..];
    if payload.len() < need {
        return Err(header_err(
            path,
            data_start,
            format!("payload holds {} bytes, header implies {need}", payload.len()),
        ));
    }
    let mut values = vec![0.0 as Real; voxels * channels];
    for (k, chunk) in payload[..need].chunks_exact(etype.size()).enumerate() {
        let (v, c) = (k / channels, k % channels);
        values[c * voxels + v] = etype.decode(chunk, big_endian) as Real;
    }
    let extents: Vec<usize> = dims.into_iter().rev().collect();
    let geometry = Geometry { spacing: spacing.into_iter().rev().collect(), origin: origin.into_iter().rev().collect() };
    Ok(Image::new(&extents, channels, values, geometry)?)
}

pub fn encode(image: &Image) -> Vec<u8> {
    let rev = |v: &[f64]| v.iter().rev().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let g = image.geometry();
    let dims: Vec<String> = image.extents().iter().rev().map(|d| d.to_string()).collect();
    let mut out = format!(
        "ObjectType = Image\nNDims = {}\nBinaryData = True\nBinaryDataByteOrderMSB = False\nCompressedData = False\n\
         DimSize = {}\nElementSpacing = {}\nOffset = {}\nElementNumberOfChannels = {}\nElementType = MET_DOUBLE\n\
         ElementDataFile = LOCAL\n",
        image.dims(),
        dims.join(" "),
        rev(&g.spacing),
        rev(&g.origin),
        image.channels()
    )
    .into_bytes();
    let voxels = image.voxels();
    out.reserve(voxels * image.channels() * 8);
    for v in 0..voxels {
        for c in 0..image.channels() {
            out.extend_from_slice(&image.values()[c * voxels + v].to_le_bytes());
        }
    }
    out
}

pub fn write(image: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode(image)).at(path)
}
