//! Stochastic augmentation of image/mask pairs.
//!
//! Every transform has a deterministic `apply` taking explicit parameters;
//! [`AugKind::sample`] draws those parameters from the configured ranges,
//! and [`compose`] gates each plan entry by its probability.

pub mod interp;
pub mod intensity;
pub mod kspace;
pub mod spatial;

use alloc::{format, vec, vec::Vec};
use core::f64::consts::PI;

use crate::{Error, Image, Real, Result, Rng};
pub use kspace::{MotionParams, SpikeParams};
pub use spatial::{AffineParams, ElasticParams};

/// An image with an optional label mask of the same extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Option<Image>,
}

impl Sample {
    pub fn new(image: Image, mask: Option<Image>) -> Result<Self> {
        if let Some(m) = &mask {
            image.same_extents(m)?;
        }
        Ok(Self { image, mask })
    }
}

/// Closed interval `[lo, hi]` for a sampled parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo <= self.hi) {
            return Err(Error::config(format!("{what} range [{}, {}] is not ordered", self.lo, self.hi)));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        rng.range(self.lo, self.hi)
    }
}

/// A transform family with its parameter ranges.
#[derive(Clone, Debug, PartialEq)]
pub enum AugKind {
    /// Rotation angle (degrees, each plane), isotropic zoom, shift (voxels).
    Affine { degrees: Span, scale: Span, translation: Span },
    /// Coarse control grid with per-axis displacement up to `max_displacement` voxels.
    Elastic { control_points: usize, max_displacement: f64 },
    Flip { axes: Vec<usize> },
    /// Quarter-turn rotations drawn from `angles` (90 or 180) in a plane.
    Rotate { angles: Vec<u32>, axes: (usize, usize) },
    Anisotropy { axes: Vec<usize>, factor: Span },
    Blur { sigma: Span },
    Noise { mean: f64, std: Span },
    Gamma { gamma: Span },
    BiasField { order: usize, coefficients: f64 },
    Motion { num_transforms: usize, translation: Span },
    Ghosting { num_ghosts: (usize, usize), axes: Vec<usize>, intensity: Span },
    Spike { num_spikes: usize, intensity: Span },
}

/// Fully drawn parameters for one application.
#[derive(Clone, Debug, PartialEq)]
pub enum AugParams {
    Affine(AffineParams),
    Elastic(ElasticParams),
    Flip(Vec<usize>),
    Rotate { quarter_turns: u32, axes: (usize, usize) },
    Anisotropy { axis: usize, factor: f64 },
    Blur(Vec<f64>),
    Noise { mean: f64, std: f64, seed: u64 },
    Gamma(f64),
    BiasField { order: usize, coefficients: Vec<f64> },
    Motion(MotionParams),
    Ghosting { every: usize, axis: usize, intensity: f64 },
    Spike(SpikeParams),
}

impl AugKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugKind::Affine { .. } => "affine",
            AugKind::Elastic { .. } => "elastic",
            AugKind::Flip { .. } => "flip",
            AugKind::Rotate { .. } => "rotate",
            AugKind::Anisotropy { .. } => "anisotropy",
            AugKind::Blur { .. } => "blur",
            AugKind::Noise { .. } => "noise",
            AugKind::Gamma { .. } => "gamma",
            AugKind::BiasField { .. } => "bias_field",
            AugKind::Motion { .. } => "motion",
            AugKind::Ghosting { .. } => "ghosting",
            AugKind::Spike { .. } => "spike",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AugKind::Affine { degrees, scale, translation } => {
                degrees.validate("affine degrees")?;
                scale.validate("affine scale")?;
                translation.validate("affine translation")?;
                if !(scale.lo > 0.0) {
                    return Err(Error::config("affine scale must be positive"));
                }
            }
            AugKind::Elastic { control_points, max_displacement } => {
                if *control_points < 2 || !(*max_displacement >= 0.0) {
                    return Err(Error::config("elastic needs control_points >= 2 and max_displacement >= 0"));
                }
            }
            AugKind::Flip { axes } | AugKind::Anisotropy { axes, .. } | AugKind::Ghosting { axes, .. }
                if axes.is_empty() =>
            {
                return Err(Error::config(format!("{} needs at least one axis", self.name())));
            }
            AugKind::Rotate { angles, .. } => {
                if angles.is_empty() || angles.iter().any(|a| *a != 90 && *a != 180) {
                    return Err(Error::config(format!("rotate angles must be 90 or 180, got {angles:?}")));
                }
            }
            AugKind::Anisotropy { factor, .. } => {
                factor.validate("anisotropy factor")?;
                if !(factor.lo >= 1.0) {
                    return Err(Error::config("anisotropy factor must be at least 1"));
                }
            }
            AugKind::Blur { sigma } => {
                sigma.validate("blur sigma")?;
                if !(sigma.lo >= 0.0) {
                    return Err(Error::config("blur sigma must be non-negative"));
                }
            }
            AugKind::Noise { std, .. } => {
                std.validate("noise std")?;
                if !(std.lo >= 0.0) {
                    return Err(Error::config("noise std must be non-negative"));
                }
            }
            AugKind::Gamma { gamma } => {
                gamma.validate("gamma")?;
                if !(gamma.lo > 0.0) {
                    return Err(Error::config("gamma must be positive"));
                }
            }
            AugKind::BiasField { coefficients, .. } => {
                if !(*coefficients >= 0.0) {
                    return Err(Error::config("bias field coefficient bound must be non-negative"));
                }
            }
            AugKind::Motion { num_transforms, translation } => {
                translation.validate("motion translation")?;
                if *num_transforms == 0 {
                    return Err(Error::config("motion needs at least one transform"));
                }
            }
            AugKind::Ghosting { num_ghosts, intensity, .. } => {
                intensity.validate("ghosting intensity")?;
                if num_ghosts.0 == 0 || num_ghosts.0 > num_ghosts.1 || intensity.lo < 0.0 || intensity.hi > 1.0 {
                    return Err(Error::config("ghosting needs 1 <= num_ghosts range and intensity within [0, 1]"));
                }
            }
            AugKind::Spike { intensity, .. } => intensity.validate("spike intensity")?,
            AugKind::Flip { .. } => {}
        }
        Ok(())
    }

    /// Draw concrete parameters for an image with the given extents.
    pub fn sample(&self, extents: &[usize], rng: &mut Rng) -> Result<AugParams> {
        let d = extents.len();
        let pick = |rng: &mut Rng, axes: &[usize]| axes[rng.below(axes.len() as u64) as usize];
        Ok(match self {
            AugKind::Affine { degrees, scale, translation } => {
                let planes = if d == 2 { 1 } else { 3 };
                let angles: Vec<f64> = (0..planes).map(|_| degrees.draw(rng) * PI / 180.0).collect();
                let s = scale.draw(rng);
                let t: Vec<f64> = (0..d).map(|_| translation.draw(rng)).collect();
                AugParams::Affine(AffineParams::from_parts(d, &angles, s, t)?)
            }
            AugKind::Elastic { control_points, max_displacement } => {
                let grid: Vec<usize> = extents.iter().map(|&e| if e > 1 { *control_points } else { 2 }).collect();
                let cells: usize = grid.iter().product();
                let displacement = (0..d)
                    .map(|a| {
                        (0..cells)
                            .map(|_| if extents[a] > 1 { rng.range(-max_displacement, *max_displacement) as Real } else { 0.0 })
                            .collect()
                    })
                    .collect();
                AugParams::Elastic(ElasticParams { grid, displacement })
            }
            AugKind::Flip { axes } => AugParams::Flip(axes.clone()),
            AugKind::Rotate { angles, axes } => {
                let mut a = angles[rng.below(angles.len() as u64) as usize];
                if a == 90 && extents.get(axes.0) != extents.get(axes.1) {
                    a = 180;
                }
                AugParams::Rotate { quarter_turns: a / 90, axes: *axes }
            }
            AugKind::Anisotropy { axes, factor } => AugParams::Anisotropy { axis: pick(rng, axes), factor: factor.draw(rng) },
            AugKind::Blur { sigma } => {
                let s = sigma.draw(rng);
                AugParams::Blur(extents.iter().map(|&e| if e > 1 { s } else { 0.0 }).collect())
            }
            AugKind::Noise { mean, std } => AugParams::Noise { mean: *mean, std: std.draw(rng), seed: rng.next_u64() },
            AugKind::Gamma { gamma } => AugParams::Gamma(gamma.draw(rng)),
            AugKind::BiasField { order, coefficients } => {
                let n = kspace::monomials(d, *order).len();
                AugParams::BiasField {
                    order: *order,
                    coefficients: (0..n).map(|_| rng.range(-coefficients, *coefficients)).collect(),
                }
            }
            AugKind::Motion { num_transforms, translation } => {
                let n0 = extents[0];
                let segments = (*num_transforms + 1).min(n0);
                let mut cuts: Vec<usize> = (1..n0).collect();
                rng.shuffle(&mut cuts);
                let mut boundaries: Vec<usize> = cuts.into_iter().take(segments - 1).collect();
                boundaries.sort_unstable();
                let mut shifts = vec![vec![0.0; d]];
                for _ in 1..segments {
                    shifts.push((0..d).map(|a| if extents[a] > 1 { translation.draw(rng) } else { 0.0 }).collect());
                }
                AugParams::Motion(MotionParams { shifts, boundaries })
            }
            AugKind::Ghosting { num_ghosts, axes, intensity } => {
                let axis = pick(rng, axes);
                let k = num_ghosts.0 + rng.below((num_ghosts.1 - num_ghosts.0 + 1) as u64) as usize;
                AugParams::Ghosting { every: k, axis, intensity: intensity.draw(rng) }
            }
            AugKind::Spike { num_spikes, intensity } => {
                let positions = (0..*num_spikes)
                    .map(|_| extents.iter().map(|&e| rng.below(e as u64) as usize).collect())
                    .collect();
                AugParams::Spike(SpikeParams { positions, intensity: intensity.draw(rng) })
            }
        })
    }
}

/// Apply k-space transforms channel by channel.
fn per_channel(image: &Image, f: impl Fn(&Image) -> Result<Image>) -> Result<Image> {
    if image.channels() == 1 {
        return f(image);
    }
    let parts = (0..image.channels())
        .map(|c| f(&image.extract_channel(c)?))
        .collect::<Result<Vec<_>>>()?;
    Image::stack_channels(&parts)
}

fn image_only(sample: &Sample, image: Image) -> Sample {
    Sample { image, mask: sample.mask.clone() }
}

/// Apply fully specified parameters.
pub fn apply(params: &AugParams, sample: &Sample) -> Result<Sample> {
    let img = &sample.image;
    Ok(match params {
        AugParams::Affine(p) => spatial::affine(sample, p)?,
        AugParams::Elastic(p) => spatial::elastic(sample, p)?,
        AugParams::Flip(axes) => spatial::flip(sample, axes)?,
        AugParams::Rotate { quarter_turns, axes } => spatial::rotate(sample, *quarter_turns, *axes)?,
        AugParams::Anisotropy { axis, factor } => spatial::anisotropy(sample, *axis, *factor)?,
        AugParams::Blur(s) => image_only(sample, intensity::blur(img, s)?),
        AugParams::Noise { mean, std, seed } => image_only(sample, intensity::noise(img, *mean, *std, *seed)?),
        AugParams::Gamma(g) => image_only(sample, intensity::gamma(img, *g)?),
        AugParams::BiasField { order, coefficients } => {
            image_only(sample, kspace::bias_field(img, *order, coefficients)?)
        }
        AugParams::Motion(p) => image_only(sample, per_channel(img, |c| kspace::motion(c, p))?),
        AugParams::Ghosting { every, axis, intensity } => {
            image_only(sample, per_channel(img, |c| kspace::ghosting(c, *every, *axis, *intensity))?)
        }
        AugParams::Spike(p) => image_only(sample, per_channel(img, |c| kspace::spike(c, p))?),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanEntry {
    pub kind: AugKind,
    pub probability: f64,
}

/// Ordered augmentation entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentationPlan {
    pub entries: Vec<PlanEntry>,
}

impl AugmentationPlan {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(0.0..=1.0).contains(&e.probability) {
                return Err(Error::config(format!(
                    "{} probability must lie in [0, 1], got {}",
                    e.kind.name(),
                    e.probability
                )));
            }
            e.kind.validate()?;
        }
        Ok(())
    }
}

/// Apply each entry in order with its probability.
pub fn compose(plan: &AugmentationPlan, sample: &Sample, rng: &mut Rng) -> Result<Sample> {
    let mut cur = sample.clone();
    for e in &plan.entries {
        if rng.uniform() < e.probability {
            let p = e.kind.sample(cur.image.extents(), rng)?;
            cur = apply(&p, &cur)?;
        }
    }
    Ok(cur)
}

/// All transform kinds with the default ranges used by the config template.
pub fn default_kinds(dims: usize) -> Vec<AugKind> {
    let axes: Vec<usize> = (0..dims).collect();
    vec![
        AugKind::Affine { degrees: Span::new(-15.0, 15.0), scale: Span::new(0.9, 1.1), translation: Span::new(-2.0, 2.0) },
        AugKind::Elastic { control_points: 5, max_displacement: 2.0 },
        AugKind::Flip { axes: vec![0] },
        AugKind::Rotate { angles: vec![90, 180], axes: (dims - 2, dims - 1) },
        AugKind::Anisotropy { axes: axes.clone(), factor: Span::new(1.5, 3.0) },
        AugKind::Blur { sigma: Span::new(0.0, 1.0) },
        AugKind::Noise { mean: 0.0, std: Span::new(0.0, 0.1) },
        AugKind::Gamma { gamma: Span::new(0.7, 1.5) },
        AugKind::BiasField { order: 3, coefficients: 0.3 },
        AugKind::Motion { num_transforms: 2, translation: Span::new(-2.0, 2.0) },
        AugKind::Ghosting { num_ghosts: (4, 10), axes: axes.clone(), intensity: Span::new(0.3, 0.7) },
        AugKind::Spike { num_spikes: 1, intensity: Span::new(0.1, 0.3) },
    ]
}
