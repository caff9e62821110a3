//! Training-patch placement, padded patch extraction and sliding-window tiling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::BoxF;
use crate::volgrid::{shape_len, Shape, Volume};
use crate::{Error, Result};

/// Fraction of the patch size up to which an object gets a containment-preserving
/// random offset, and the fraction of the free space the offset may use.
pub const OFFSET_FRACTION: f64 = 0.7;

/// A crop window; the origin may lie outside the volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin: [i64; 3],
    pub size: [usize; 3],
}

impl PatchSpec {
    pub fn new(origin: [i64; 3], size: [usize; 3]) -> Result<Self> {
        if size.contains(&0) {
            return Err(Error::InvalidArgument(format!("patch size {size:?} has a zero axis")));
        }
        Ok(PatchSpec { origin, size })
    }

    pub fn end(&self) -> [i64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + self.size[a] as i64)
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] as f64 + self.size[a] as f64 / 2.0)
    }

    /// True when the half-open box lies inside the patch window.
    pub fn contains_box(&self, b: &BoxF) -> bool {
        (0..3).all(|a| b.min[a] >= self.origin[a] as f64 && b.max[a] <= self.end()[a] as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Object fits; it stays fully inside the patch under a random offset.
    Contain,
    /// Object too large; the patch is centred on a random point inside it.
    CenterPoint,
}

/// Branch chosen for an axis: `Contain` iff `object_size <= 0.7 * patch_size`.
pub fn placement_rule(object_size: f64, patch_size: usize) -> Placement {
    // 10 * S <= 7 * P is exact for integral sizes; ties take the containment branch
    if object_size * 10.0 <= patch_size as f64 * 7.0 {
        Placement::Contain
    } else {
        Placement::CenterPoint
    }
}

/// Draws a training patch around `target`.
///
/// Per axis with object size `S` and patch size `P`:
/// * `S <= 0.7 P`: the patch starts centred on the object and is shifted by
///   `U(-0.7 (P - S), 0.7 (P - S))`, clipped to keep the object inside.
/// * otherwise the patch is centred on `U(min, max)` of the object interval.
///
/// Offsets are drawn as reals and floored to integer origins.
pub fn sample_training_patch(
    volume_shape: Shape,
    target: &BoxF,
    patch_size: [usize; 3],
    seed: u64,
) -> Result<PatchSpec> {
    target.validate()?;
    if patch_size.contains(&0) {
        return Err(Error::InvalidArgument(format!("patch size {patch_size:?} has a zero axis")));
    }
    if !target.intersects_volume(volume_shape) {
        return Err(Error::TargetOutsideVolume);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut origin = [0i64; 3];
    for a in 0..3 {
        let (lo, hi) = (target.min[a], target.max[a]);
        let size = hi - lo;
        let p = patch_size[a] as f64;
        origin[a] = match placement_rule(size, patch_size[a]) {
            Placement::Contain => {
                let free = p - size;
                let bound = OFFSET_FRACTION * free;
                let offset = if bound > 0.0 {
                    rng.random_range(-bound..=bound).clamp(-free / 2.0, free / 2.0)
                } else {
                    0.0
                };
                let start = (lo - free / 2.0 + offset).floor() as i64;
                // flooring a non-integral corner can cost up to one voxel
                let first = hi.ceil() as i64 - patch_size[a] as i64;
                let last = lo.floor() as i64;
                if first <= last {
                    start.clamp(first, last)
                } else {
                    start
                }
            }
            Placement::CenterPoint => {
                let c = rng.random_range(lo..hi);
                (c - p / 2.0).floor() as i64
            }
        };
    }
    PatchSpec::new(origin, patch_size)
}

/// Crops `spec` from `vol`; voxels outside the volume take `pad_value`
/// (label volumes always pad with 0).
pub fn extract_patch(vol: &Volume, spec: &PatchSpec, pad_value: f32) -> Volume {
    let shape = vol.shape();
    let size = spec.size;
    let pad = if vol.is_label() { 0.0 } else { pad_value };
    let mut data = vec![pad; shape_len(size)];
    let src = vol.data();
    for z in 0..size[0] {
        let sz = spec.origin[0] + z as i64;
        if sz < 0 || sz >= shape[0] as i64 {
            continue;
        }
        for y in 0..size[1] {
            let sy = spec.origin[1] + y as i64;
            if sy < 0 || sy >= shape[1] as i64 {
                continue;
            }
            let x0 = (-spec.origin[2]).max(0) as usize;
            let x1 = ((shape[2] as i64 - spec.origin[2]).min(size[2] as i64)).max(0) as usize;
            if x0 >= x1 {
                continue;
            }
            let dst_row = (z * size[1] + y) * size[2];
            let src_row = (sz as usize * shape[1] + sy as usize) * shape[2];
            let sx0 = (spec.origin[2] + x0 as i64) as usize;
            data[dst_row + x0..dst_row + x1].copy_from_slice(&src[src_row + sx0..src_row + sx0 + (x1 - x0)]);
        }
    }
    let spacing = vol.spacing();
    let origin = [0, 1, 2].map(|a| vol.origin()[a] + spec.origin[a] as f64 * spacing[a]);
    Volume::from_parts_unchecked(size, spacing, origin, vol.kind(), vol.dtype(), data)
}

/// Writes the in-bounds part of `patch` back into `dst` at `origin`.
pub fn embed_patch(dst: &mut Volume, patch: &Volume, origin: [i64; 3]) {
    let shape = dst.shape();
    let size = patch.shape();
    let src = patch.data();
    let out = dst.data_mut();
    for z in 0..size[0] {
        for y in 0..size[1] {
            for x in 0..size[2] {
                let g = [origin[0] + z as i64, origin[1] + y as i64, origin[2] + x as i64];
                if (0..3).all(|a| g[a] >= 0 && g[a] < shape[a] as i64) {
                    out[(g[0] as usize * shape[1] + g[1] as usize) * shape[2] + g[2] as usize] =
                        src[(z * size[1] + y) * size[2] + x];
                }
            }
        }
    }
}

fn axis_origins(n: usize, p: usize, stride: usize) -> Vec<i64> {
    if p >= n {
        return vec![0];
    }
    let mut out = vec![];
    let mut o = 0;
    while o + p < n {
        out.push(o as i64);
        o += stride;
    }
    let last = (n - p) as i64;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Sliding-window tiles covering the volume, z-major order.
///
/// Stride is `max(1, floor(P * (1 - overlap)))`; the final tile on each axis
/// is shifted back to end at the volume boundary.
pub fn tile_volume(volume_shape: Shape, patch_size: [usize; 3], overlap_fraction: f64) -> Result<Vec<PatchSpec>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidArgument(format!("overlap {overlap_fraction} outside [0, 1)")));
    }
    if patch_size.iter().chain(&volume_shape).any(|&s| s == 0) {
        return Err(Error::InvalidArgument("zero-sized patch or volume".into()));
    }
    let origins: Vec<Vec<i64>> = (0..3)
        .map(|a| {
            let stride = ((patch_size[a] as f64 * (1.0 - overlap_fraction)).floor() as usize).max(1);
            axis_origins(volume_shape[a], patch_size[a], stride)
        })
        .collect();
    let mut tiles = Vec::with_capacity(origins.iter().map(Vec::len).product());
    for &z in &origins[0] {
        for &y in &origins[1] {
            for &x in &origins[2] {
                tiles.push(PatchSpec {
                    origin: [z, y, x],
                    size: patch_size,
                });
            }
        }
    }
    Ok(tiles)
}
