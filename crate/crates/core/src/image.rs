//! Multi-channel scalar grids with physical geometry.
//!
//! Values are stored channel-major, each channel a row-major grid whose
//! last axis varies fastest.

use alloc::{format, vec, vec::Vec};

use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    /// Physical size of one voxel along each axis (mm).
    pub spacing: Vec<f64>,
    /// Physical position of voxel 0 (mm).
    pub origin: Vec<f64>,
}

impl Geometry {
    pub fn unit(dims: usize) -> Self {
        Self { spacing: vec![1.0; dims], origin: vec![0.0; dims] }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.spacing.len() != dims || self.origin.len() != dims {
            return Err(Error::config(format!(
                "geometry has {} spacing / {} origin entries for a {dims}D image",
                self.spacing.len(),
                self.origin.len()
            )));
        }
        if let Some(s) = self.spacing.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::config(format!("spacing must be positive, got {s}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    geometry: Geometry,
    extents: Vec<usize>,
    channels: usize,
    values: Vec<Real>,
}

/// Row-major strides for `extents`.
pub fn strides(extents: &[usize]) -> Vec<usize> {
    let mut s = vec![1; extents.len()];
    for i in (0..extents.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * extents[i + 1];
    }
    s
}

/// Decompose a flat row-major index into per-axis coordinates.
pub fn unravel(mut flat: usize, extents: &[usize], out: &mut [usize]) {
    for i in (0..extents.len()).rev() {
        out[i] = flat % extents[i];
        flat /= extents[i];
    }
}

impl Image {
    pub fn new(extents: &[usize], channels: usize, values: Vec<Real>, geometry: Geometry) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::dim(0, "image needs at least one spatial axis"));
        }
        if let Some(axis) = extents.iter().position(|&e| e == 0) {
            return Err(Error::dim(axis, "zero extent"));
        }
        if channels == 0 {
            return Err(Error::dim(0, "image needs at least one channel"));
        }
        let expected = channels * extents.iter().product::<usize>();
        if values.len() != expected {
            return Err(Error::dim(
                0,
                format!("{} values for {channels} channel(s) of {extents:?}", values.len()),
            ));
        }
        geometry.validate(extents.len())?;
        Ok(Self { geometry, extents: extents.to_vec(), channels, values })
    }

    pub fn zeros(extents: &[usize], channels: usize) -> Self {
        let n = channels * extents.iter().product::<usize>();
        Self {
            geometry: Geometry::unit(extents.len()),
            extents: extents.to_vec(),
            channels,
            values: vec![0.0; n],
        }
    }

    /// Single-channel image from a function of the voxel coordinates.
    pub fn from_fn(extents: &[usize], mut f: impl FnMut(&[usize]) -> Real) -> Self {
        let mut img = Self::zeros(extents, 1);
        let mut idx = vec![0; extents.len()];
        for (flat, v) in img.values.iter_mut().enumerate() {
            unravel(flat, extents, &mut idx);
            *v = f(&idx);
        }
        img
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxels(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn set_geometry(&mut self, geometry: Geometry) -> Result<()> {
        geometry.validate(self.dims())?;
        self.geometry = geometry;
        Ok(())
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Result<Self> {
        self.set_geometry(geometry)?;
        Ok(self)
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Real> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[Real] {
        let n = self.voxels();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Real] {
        let n = self.voxels();
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Same geometry and extents, new values (any channel count).
    pub fn like(&self, channels: usize, values: Vec<Real>) -> Result<Self> {
        Self::new(&self.extents, channels, values, self.geometry.clone())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn extract_channel(&self, c: usize) -> Result<Self> {
        if c >= self.channels {
            return Err(Error::dim(0, format!("channel {c} of {}", self.channels)));
        }
        self.like(1, self.channel(c).to_vec())
    }

    /// Stack single- or multi-channel images sharing extents.
    pub fn stack_channels(parts: &[Image]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::contract("no images to stack"))?;
        let mut values = Vec::with_capacity(parts.iter().map(|p| p.values.len()).sum());
        let mut channels = 0;
        for p in parts {
            if p.extents != first.extents {
                let axis = p.extents.iter().zip(&first.extents).position(|(a, b)| a != b).unwrap_or(0);
                return Err(Error::dim(
                    axis,
                    format!("extents {:?} differ from {:?}", p.extents, first.extents),
                ));
            }
            channels += p.channels;
            values.extend_from_slice(&p.values);
        }
        first.like(channels, values)
    }

    /// `[1, C, extents...]` tensor view of the values.
    pub fn to_tensor(&self) -> Tensor {
        let mut shape = vec![1, self.channels];
        shape.extend_from_slice(&self.extents);
        Tensor::new(&shape, self.values.clone()).expect("image invariant")
    }

    /// Build from a `[1, C, extents...]` or `[C, extents...]` tensor.
    pub fn from_tensor(t: &Tensor, geometry: Geometry) -> Result<Self> {
        let shape = t.shape();
        let (c, ext) = match shape.first() {
            Some(1) if shape.len() >= 3 => (shape[1], &shape[2..]),
            _ if shape.len() >= 2 => (shape[0], &shape[1..]),
            _ => return Err(Error::dim(0, format!("cannot view {shape:?} as an image"))),
        };
        Self::new(ext, c, t.data().to_vec(), geometry)
    }

    pub fn min_max(&self) -> (Real, Real) {
        self.values
            .iter()
            .fold((Real::INFINITY, Real::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn same_extents(&self, other: &Image) -> Result<()> {
        if self.extents.len() != other.extents.len() {
            return Err(Error::dim(0, format!("{:?} vs {:?}", self.extents, other.extents)));
        }
        match self.extents.iter().zip(&other.extents).position(|(a, b)| a != b) {
            Some(axis) => Err(Error::dim(
                axis,
                format!("extents {:?} vs {:?}", self.extents, other.extents),
            )),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_and_unravel_agree() {
        let ext = [3, 4, 5];
        let s = strides(&ext);
        assert_eq!(s, vec![20, 5, 1]);
        let mut idx = [0; 3];
        unravel(37, &ext, &mut idx);
        assert_eq!(idx[0] * 20 + idx[1] * 5 + idx[2], 37);
    }

    #[test]
    fn rejects_bad_geometry_and_counts() {
        assert!(Image::new(&[2, 2], 1, vec![0.0; 3], Geometry::unit(2)).is_err());
        let g = Geometry { spacing: vec![1.0, 0.0], origin: vec![0.0; 2] };
        assert!(matches!(Image::new(&[2, 2], 1, vec![0.0; 4], g), Err(Error::Config(_))));
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as Real);
        let back = Image::from_tensor(&img.to_tensor(), img.geometry().clone()).unwrap();
        assert_eq!(img, back);
    }
}
