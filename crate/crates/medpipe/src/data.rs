//! Loading manifest subjects into memory and turning them into tensors.

use medpipe_core::models::Task;
use medpipe_core::preprocess::{apply_steps, Step};
use medpipe_core::{Image, Real, Tensor};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::io::{read_image, SubjectRecord, Target};

/// A preprocessed subject. Segmentation masks hold class indices.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub image: Image,
    pub mask: Option<Image>,
    pub value: Option<f64>,
}

/// Index of `value` in the class list.
pub fn class_index(classes: &[f64], value: f64) -> Option<usize> {
    classes.iter().position(|&c| c == value)
}

fn mask_to_indices(id: &str, mask: &Image, classes: &[f64]) -> Result<Image> {
    let mut values = Vec::with_capacity(mask.values().len());
    for &v in mask.values() {
        match class_index(classes, v) {
            Some(k) => values.push(k as Real),
            None => {
                return Err(PipelineError::Validation(format!(
                    "subject {id}: mask value {v} is not in model.class_list {classes:?}"
                )))
            }
        }
    }
    Ok(mask.like(mask.channels(), values)?)
}

/// Read the channels (and mask) of one record and apply the preprocessing
/// steps.
pub fn load_subject(record: &SubjectRecord, cfg: &PipelineConfig, steps: &[Step]) -> Result<Subject> {
    let mut channels = Vec::with_capacity(record.channel_paths.len());
    for p in &record.channel_paths {
        channels.push(read_image(p)?);
    }
    let image = Image::stack_channels(&channels)?;
    if image.channels() != cfg.model.num_channels {
        return Err(PipelineError::Validation(format!(
            "subject {}: {} channel(s) but model.num_channels is {}",
            record.subject_id,
            image.channels(),
            cfg.model.num_channels
        )));
    }
    if image.dims() != cfg.patch_size.len() {
        return Err(PipelineError::Validation(format!(
            "subject {}: {}D image but patch_size {:?} is {}D",
            record.subject_id,
            image.dims(),
            cfg.patch_size,
            cfg.patch_size.len()
        )));
    }
    let (mask, value) = match &record.target {
        Target::Mask(p) => (Some(read_image(p)?), None),
        Target::Value(v) => (None, Some(*v)),
        Target::None => (None, None),
    };
    let (image, mask) = apply_steps(steps, image, mask)?;
    let mask = match mask {
        Some(m) => Some(mask_to_indices(&record.subject_id, &m, &cfg.model.class_list)?),
        None => None,
    };
    if cfg.task() == Task::Classification {
        if let Some(v) = value {
            if class_index(&cfg.model.class_list, v).is_none() {
                return Err(PipelineError::Validation(format!(
                    "subject {}: label {v} is not in model.class_list {:?}",
                    record.subject_id, cfg.model.class_list
                )));
            }
        }
    }
    Ok(Subject { id: record.subject_id.clone(), image, mask, value })
}

pub fn load_subjects(records: &[SubjectRecord], cfg: &PipelineConfig) -> Result<Vec<Subject>> {
    let steps = cfg.preprocessing_steps()?;
    records.iter().map(|r| load_subject(r, cfg, &steps)).collect()
}

/// One-hot `[1, K, ...]` tensor of a class-index mask.
pub fn one_hot(mask: &Image, classes: usize) -> Tensor {
    let vol = mask.voxels();
    let mut data = vec![0.0; classes * vol];
    for (i, &v) in mask.channel(0).iter().enumerate() {
        data[v as usize * vol + i] = 1.0;
    }
    let mut shape = vec![1, classes];
    shape.extend_from_slice(mask.extents());
    Tensor::new(&shape, data).expect("one-hot shape matches data")
}

/// `[1, K]` (classification) or `[1, 1]` (regression) target tensor.
pub fn value_target(value: f64, task: Task, classes: &[f64]) -> Result<Tensor> {
    match task {
        Task::Classification => {
            let k = class_index(classes, value)
                .ok_or_else(|| PipelineError::Validation(format!("label {value} is not in model.class_list")))?;
            let mut t = Tensor::zeros(&[1, classes.len()]);
            t.data_mut()[k] = 1.0;
            Ok(t)
        }
        _ => Ok(Tensor::new(&[1, 1], vec![value as Real])?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use medpipe_core::Geometry;

    fn img(ext: &[usize], v: Vec<Real>) -> Image {
        Image::new(ext, 1, v, Geometry::unit(ext.len())).unwrap()
    }

    #[test]
    fn one_hot_layout() {
        let mask = img(&[2, 2], vec![0.0, 1.0, 1.0, 2.0]);
        let t = one_hot(&mask, 3);
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unknown_mask_value_rejected() {
        let mask = img(&[2], vec![0.0, 3.0]);
        assert!(mask_to_indices("s", &mask, &[0.0, 1.0]).is_err());
        let ok = mask_to_indices("s", &img(&[2], vec![0.0, 255.0]), &[0.0, 255.0]).unwrap();
        assert_eq!(ok.values(), &[0.0, 1.0]);
    }
}
