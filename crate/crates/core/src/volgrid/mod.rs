//! Voxel grids, MVOL file I/O, spacing-aware resampling and synthetic phantoms.
//!
//! Axis order is `(z, y, x)` everywhere. Voxel data is stored with `x` varying
//! fastest and `z` slowest.

mod io;
mod phantom;
mod resample;

pub use io::{load_volume, mvol_paths, save_volume};
pub use phantom::{generate_phantom, random_phantom_spec, PhantomLesion, PhantomSpec};
pub use resample::{needs_resampling, resample, resample_with, DEFAULT_SPACING_TOLERANCE, TARGET_SPACING};
pub(crate) use resample::{resize_linear, sample_linear};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Shape = [usize; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
    U16,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U8 => "u8",
            DType::U16 => "u16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "u8" => Ok(DType::U8),
            "u16" => Ok(DType::U16),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
            DType::U16 => 2,
        }
    }

    fn max_value(self) -> Option<f32> {
        match self {
            DType::F32 => None,
            DType::U8 => Some(u8::MAX as f32),
            DType::U16 => Some(u16::MAX as f32),
        }
    }
}

/// A 3D scalar grid with physical geometry.
///
/// Values are held as `f32` regardless of the on-disk dtype; integer dtypes
/// are range- and integrality-checked on construction so the conversion is
/// lossless. `origin` is the world position (mm) of the centre of voxel
/// `(0, 0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: Shape,
    spacing: [f64; 3],
    origin: [f64; 3],
    kind: VolumeKind,
    dtype: DType,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        shape: Shape,
        spacing: [f64; 3],
        origin: [f64; 3],
        kind: VolumeKind,
        dtype: DType,
        data: Vec<f32>,
    ) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidVolume(format!("shape {shape:?} has a zero axis")));
        }
        let expected = shape_len(shape);
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        check_spacing(&spacing)?;
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite origin {origin:?}")));
        }
        if kind == VolumeKind::Label && dtype == DType::F32 {
            return Err(Error::InvalidVolume("label volumes need an integer dtype".into()));
        }
        if let Some(max) = dtype.max_value() {
            if let Some(bad) = data
                .iter()
                .find(|&&v| !(v >= 0.0 && v <= max && v.fract() == 0.0))
            {
                return Err(Error::InvalidVolume(format!(
                    "value {bad} not representable as {}",
                    dtype.as_str()
                )));
            }
        }
        Ok(Volume {
            shape,
            spacing,
            origin,
            kind,
            dtype,
            data,
        })
    }

    /// An `f32` image with unit spacing and zero origin.
    pub fn image(shape: Shape, data: Vec<f32>) -> Result<Self> {
        Volume::new(shape, [1.0; 3], [0.0; 3], VolumeKind::Image, DType::F32, data)
    }

    /// A `u16` label volume with unit spacing and zero origin.
    pub fn label(shape: Shape, data: Vec<f32>) -> Result<Self> {
        Volume::new(shape, [1.0; 3], [0.0; 3], VolumeKind::Label, DType::U16, data)
    }

    pub fn zeros(shape: Shape, kind: VolumeKind) -> Result<Self> {
        let data = vec![0.0; shape_len(shape)];
        match kind {
            VolumeKind::Image => Volume::image(shape, data),
            VolumeKind::Label => Volume::label(shape, data),
        }
    }

    /// Replaces spacing and origin, keeping the payload.
    pub fn with_geometry(mut self, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(&spacing)?;
        self.spacing = spacing;
        self.origin = origin;
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_label(&self) -> bool {
        self.kind == VolumeKind::Label
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        linear_index(self.shape, [z, y, x])
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// Same geometry and kind, new payload. Used by kernels that keep shape.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Volume {
        debug_assert_eq!(data.len(), self.data.len());
        Volume {
            data,
            ..self.clone_header()
        }
    }

    pub(crate) fn clone_header(&self) -> Volume {
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            origin: self.origin,
            kind: self.kind,
            dtype: self.dtype,
            data: Vec::new(),
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn from_parts_unchecked(
        shape: Shape,
        spacing: [f64; 3],
        origin: [f64; 3],
        kind: VolumeKind,
        dtype: DType,
        data: Vec<f32>,
    ) -> Volume {
        debug_assert_eq!(data.len(), shape_len(shape));
        Volume {
            shape,
            spacing,
            origin,
            kind,
            dtype,
            data,
        }
    }
}

#[inline]
pub fn shape_len(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[inline]
pub fn linear_index(shape: Shape, idx: [usize; 3]) -> usize {
    (idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]
}

pub(crate) fn check_spacing(spacing: &[f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidSpacing(format!(
            "{spacing:?} must be finite and positive"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_payloads() {
        assert!(matches!(
            Volume::image([2, 2, 2], vec![0.0; 7]),
            Err(Error::LengthMismatch { expected: 8, actual: 7 })
        ));
        assert!(Volume::label([1, 1, 2], vec![0.0, 1.5]).is_err());
        assert!(Volume::label([1, 1, 2], vec![0.0, -1.0]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3], VolumeKind::Image, DType::F32, vec![0.0]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0; 3], [0.0; 3], VolumeKind::Image, DType::U8, vec![256.0]).is_err());
        assert!(Volume::image([0, 1, 1], vec![]).is_err());
    }

    #[test]
    fn x_is_fastest_axis() {
        let v = Volume::image([2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(v.get(0, 0, 1), 1.0);
        assert_eq!(v.get(0, 1, 0), 4.0);
        assert_eq!(v.get(1, 0, 0), 12.0);
    }
}
