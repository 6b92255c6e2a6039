//! Image files and the subject manifest.

pub mod manifest;
pub mod mha;
pub mod pnm;

use std::path::Path;

use medpipe_core::Image;

use crate::error::{PipelineError, Result};

pub use manifest::{read_manifest, write_manifest, SubjectRecord, Target};

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Read `.mha`, `.pgm` or `.ppm` by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match extension(path).as_str() {
        "mha" => mha::read(path),
        "pgm" | "ppm" | "pnm" => pnm::read(path),
        other => Err(PipelineError::format(path, format!("unsupported extension {other:?}; use .mha, .pgm or .ppm"))),
    }
}

pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    match extension(path).as_str() {
        "mha" => mha::write(image, path),
        "pgm" | "ppm" | "pnm" => pnm::write(image, path),
        other => Err(PipelineError::format(path, format!("unsupported extension {other:?}; use .mha, .pgm or .ppm"))),
    }
}
