//! Before/after images of the configured augmentations on one subject.

use std::fs;
use std::path::{Path, PathBuf};

use medpipe_core::augment::{compose, Sample};
use medpipe_core::{Image, Rng};

use crate::config::PipelineConfig;
use crate::data::Subject;
use crate::error::{IoContext, Result};
use crate::io::{mha, pnm};

pub const PREVIEW: &str = "preview";

fn write_pair(dir: &Path, stem: &str, image: &Image, written: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(format!("{stem}.mha"));
    mha::write(image, &p)?;
    written.push(p);
    if image.dims() == 2 {
        let p = dir.join(format!("{stem}.pgm"));
        pnm::write(&pnm::to_display(&image.extract_channel(0)?), &p)?;
        written.push(p);
    }
    Ok(())
}

/// Apply every configured augmentation (each forced on) to `subject` and
/// write `<id>_before` / `<id>_after` images under `output/preview`.
pub fn write_preview(cfg: &PipelineConfig, subject: &Subject, output: &Path) -> Result<Vec<PathBuf>> {
    let dir = output.join(PREVIEW);
    fs::create_dir_all(&dir).at(&dir)?;
    let mut plan = cfg.augmentation_plan()?;
    for e in &mut plan.entries {
        e.probability = 1.0;
    }
    let before = Sample::new(subject.image.clone(), subject.mask.clone())?;
    let after = compose(&plan, &before, &mut Rng::new(cfg.seed))?;
    let mut written = Vec::new();
    write_pair(&dir, &format!("{}_before", subject.id), &before.image, &mut written)?;
    write_pair(&dir, &format!("{}_after", subject.id), &after.image, &mut written)?;
    if let (Some(m0), Some(m1)) = (&before.mask, &after.mask) {
        write_pair(&dir, &format!("{}_mask_before", subject.id), m0, &mut written)?;
        write_pair(&dir, &format!("{}_mask_after", subject.id), m1, &mut written)?;
    }
    Ok(written)
}
