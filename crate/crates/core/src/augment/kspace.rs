//! MRI acquisition artefacts. Motion, ghosting and spikes act on the
//! spectrum of a single-channel image; the bias field is multiplicative in
//! image space.

use alloc::{format, vec, vec::Vec};
use core::f64::consts::PI;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::fft::{fft_real, ifft_real, Complex};
use crate::image::unravel;
use crate::{Error, Image, Real, Result};

fn single_channel(image: &Image, what: &str) -> Result<()> {
    if image.channels() != 1 {
        return Err(Error::contract(format!(
            "{what} works on one channel at a time, got {} channels",
            image.channels()
        )));
    }
    Ok(())
}

/// Signed frequency of FFT bin `k` on a length-`n` axis.
fn signed_freq(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Exponent tuples of all monomials of total degree at most `order`, in a
/// fixed enumeration order.
pub fn monomials(dims: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; dims];
    fn rec(axis: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if axis == cur.len() {
            out.push(cur.clone());
            return;
        }
        for p in 0..=left {
            cur[axis] = p;
            rec(axis + 1, left - p, cur, out);
        }
        cur[axis] = 0;
    }
    rec(0, order, &mut cur, &mut out);
    out
}

/// Multiply every channel by `exp(P(x))`, `P` a polynomial over coordinates
/// normalised to `[-1, 1]` with one coefficient per entry of
/// [`monomials`].
pub fn bias_field(image: &Image, order: usize, coefficients: &[f64]) -> Result<Image> {
    let ext = image.extents().to_vec();
    let terms = monomials(ext.len(), order);
    if terms.len() != coefficients.len() {
        return Err(Error::config(format!(
            "bias field of order {order} in {}D needs {} coefficients, got {}",
            ext.len(),
            terms.len(),
            coefficients.len()
        )));
    }
    let n = image.voxels();
    let mut idx = vec![0; ext.len()];
    let mut x = vec![0.0; ext.len()];
    let field: Vec<Real> = (0..n)
        .map(|flat| {
            unravel(flat, &ext, &mut idx);
            for a in 0..ext.len() {
                x[a] = if ext[a] > 1 { 2.0 * idx[a] as f64 / (ext[a] - 1) as f64 - 1.0 } else { 0.0 };
            }
            let p: f64 = terms
                .iter()
                .zip(coefficients)
                .map(|(t, &c)| c * t.iter().zip(&x).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>())
                .sum();
            p.exp() as Real
        })
        .collect();
    let mut out = image.clone();
    for c in 0..image.channels() {
        out.channel_mut(c).iter_mut().zip(&field).for_each(|(v, f)| *v *= f);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionParams {
    /// Rigid shift (voxels) of each simulated position.
    pub shifts: Vec<Vec<f64>>,
    /// Acquisition-order line index (along axis 0, centred order) at which
    /// each position after the first begins; strictly increasing.
    pub boundaries: Vec<usize>,
}

/// Spectrum lines along axis 0 are acquired in centred order and split into
/// segments; each segment takes its lines from the spectrum of a shifted
/// copy of the image.
pub fn motion(image: &Image, params: &MotionParams) -> Result<Image> {
    single_channel(image, "motion")?;
    let ext = image.extents().to_vec();
    let d = ext.len();
    if params.shifts.len() != params.boundaries.len() + 1 || params.shifts.iter().any(|s| s.len() != d) {
        return Err(Error::config("motion needs one shift per segment and one boundary between segments"));
    }
    if params.boundaries.windows(2).any(|w| w[0] >= w[1]) || params.boundaries.iter().any(|&b| b == 0 || b >= ext[0]) {
        return Err(Error::config(format!("motion boundaries {:?} must increase within (0, {})", params.boundaries, ext[0])));
    }
    let mut spec = fft_real(image.values(), &ext);
    let mut idx = vec![0; d];
    for (flat, z) in spec.iter_mut().enumerate() {
        unravel(flat, &ext, &mut idx);
        let line = (idx[0] + ext[0] / 2) % ext[0];
        let seg = params.boundaries.iter().take_while(|&&b| b <= line).count();
        let shift = &params.shifts[seg];
        let phase: f64 = (0..d).map(|a| -2.0 * PI * signed_freq(idx[a], ext[a]) as f64 * shift[a] / ext[a] as f64).sum();
        if phase != 0.0 {
            let (s, c) = phase.sin_cos();
            *z *= Complex::new(c as Real, s as Real);
        }
    }
    image.like(1, ifft_real(spec, &ext))
}

/// Scale every `every`-th spectrum line along `axis` (other than the
/// centre line) by `1 - intensity`.
pub fn ghosting(image: &Image, every: usize, axis: usize, intensity: f64) -> Result<Image> {
    single_channel(image, "ghosting")?;
    let ext = image.extents().to_vec();
    if axis >= ext.len() {
        return Err(Error::config(format!("axis {axis} is invalid for a {}D image", ext.len())));
    }
    if every == 0 {
        return Err(Error::config("ghost spacing must be at least 1"));
    }
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::config(format!("ghost intensity must lie in [0, 1], got {intensity}")));
    }
    let mut spec = fft_real(image.values(), &ext);
    let mut idx = vec![0; ext.len()];
    let factor = (1.0 - intensity) as Real;
    for (flat, z) in spec.iter_mut().enumerate() {
        unravel(flat, &ext, &mut idx);
        let f = signed_freq(idx[axis], ext[axis]);
        if f != 0 && f % every as i64 == 0 {
            *z *= factor;
        }
    }
    image.like(1, ifft_real(spec, &ext))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeParams {
    /// Spectrum bins (FFT index order) that receive a spike.
    pub positions: Vec<Vec<usize>>,
    /// Spike amplitude relative to the image's peak magnitude.
    pub intensity: f64,
}

/// Add `intensity * N * scale` to each listed spectrum bin, where `N` is the
/// voxel count and `scale` the largest absolute image value (1 for an
/// all-zero image). A spike alone therefore inverts to a wave of amplitude
/// `intensity * scale`.
pub fn spike(image: &Image, params: &SpikeParams) -> Result<Image> {
    single_channel(image, "spike")?;
    let ext = image.extents().to_vec();
    for p in &params.positions {
        if p.len() != ext.len() || p.iter().zip(&ext).any(|(&i, &e)| i >= e) {
            return Err(Error::config(format!("spike position {p:?} outside spectrum {ext:?}")));
        }
    }
    let peak = image.values().iter().fold(0.0 as Real, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let amp = (params.intensity * image.voxels() as f64 * scale) as Real;
    let mut spec = fft_real(image.values(), &ext);
    for p in &params.positions {
        let off = p.iter().zip(&ext).fold(0usize, |acc, (&i, &e)| acc * e + i);
        spec[off] += Complex::new(amp, 0.0);
    }
    image.like(1, ifft_real(spec, &ext))
}
