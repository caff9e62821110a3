use super::{check_spacing, shape_len, Shape, Volume, VolumeKind};
use crate::exec::Exec;
use crate::Result;

/// Low-resolution target spacing (mm) used for preprocessing.
pub const TARGET_SPACING: [f64; 3] = [1.40, 1.43, 1.43];

/// Relative spacing deviation tolerated before a scan is resampled.
pub const DEFAULT_SPACING_TOLERANCE: f64 = 0.05;

/// True iff some axis deviates from `target` by more than `tolerance`
/// (relative to the target).
pub fn needs_resampling(spacing: [f64; 3], target: [f64; 3], tolerance: f64) -> Result<bool> {
    check_spacing(&spacing)?;
    check_spacing(&target)?;
    Ok(spacing
        .iter()
        .zip(&target)
        .any(|(s, t)| (s - t).abs() / t > tolerance))
}

/// Resamples onto `target_spacing`: trilinear for images, nearest neighbour
/// for labels, edge-clamped at the border.
pub fn resample(vol: &Volume, target_spacing: [f64; 3]) -> Result<Volume> {
    resample_with(vol, target_spacing, Exec::default())
}

pub fn resample_with(vol: &Volume, target_spacing: [f64; 3], exec: Exec) -> Result<Volume> {
    check_spacing(&target_spacing)?;
    let spacing = vol.spacing();
    let in_shape = vol.shape();
    let mut out_shape = [0usize; 3];
    let mut ratio = [0f64; 3];
    let mut origin = vol.origin();
    for a in 0..3 {
        out_shape[a] = ((in_shape[a] as f64 * spacing[a] / target_spacing[a]).round() as usize).max(1);
        ratio[a] = target_spacing[a] / spacing[a];
        origin[a] += 0.5 * (target_spacing[a] - spacing[a]);
    }
    let nearest = vol.kind() == VolumeKind::Label;
    let data = sample_grid(vol.data(), in_shape, out_shape, ratio, nearest, exec);
    Ok(Volume::from_parts_unchecked(
        out_shape,
        target_spacing,
        origin,
        vol.kind(),
        vol.dtype(),
        data,
    ))
}

/// Trilinear resize to `out_shape`, aligning grid extents.
pub(crate) fn resize_linear(data: &[f32], in_shape: Shape, out_shape: Shape, exec: Exec) -> Vec<f32> {
    let ratio = [0, 1, 2].map(|a| in_shape[a] as f64 / out_shape[a] as f64);
    sample_grid(data, in_shape, out_shape, ratio, false, exec)
}

/// Trilinear sample at continuous voxel-index coordinates, edge-clamped.
pub(crate) fn sample_linear(data: &[f32], shape: Shape, p: [f64; 3]) -> f64 {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut w = [0f64; 3];
    for a in 0..3 {
        let (l, h, wt) = linear_tap(p[a], shape[a]);
        lo[a] = l;
        hi[a] = h;
        w[a] = wt;
    }
    trilinear(data, shape, lo, hi, w)
}

#[inline]
fn linear_tap(src: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let s = if src.is_nan() { 0.0 } else { src.clamp(0.0, max) };
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, s - lo as f64)
}

#[inline]
fn trilinear(data: &[f32], shape: Shape, lo: [usize; 3], hi: [usize; 3], w: [f64; 3]) -> f64 {
    let at = |z: usize, y: usize, x: usize| data[(z * shape[1] + y) * shape[2] + x] as f64;
    let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
    let c00 = lerp(at(lo[0], lo[1], lo[2]), at(lo[0], lo[1], hi[2]), w[2]);
    let c01 = lerp(at(lo[0], hi[1], lo[2]), at(lo[0], hi[1], hi[2]), w[2]);
    let c10 = lerp(at(hi[0], lo[1], lo[2]), at(hi[0], lo[1], hi[2]), w[2]);
    let c11 = lerp(at(hi[0], hi[1], lo[2]), at(hi[0], hi[1], hi[2]), w[2]);
    lerp(lerp(c00, c01, w[1]), lerp(c10, c11, w[1]), w[0])
}

struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w: Vec<f64>,
    nearest: Vec<usize>,
}

fn axis_taps(n_in: usize, n_out: usize, ratio: f64) -> AxisTaps {
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(n_out),
        hi: Vec::with_capacity(n_out),
        w: Vec::with_capacity(n_out),
        nearest: Vec::with_capacity(n_out),
    };
    for j in 0..n_out {
        let src = (j as f64 + 0.5) * ratio - 0.5;
        let (lo, hi, w) = linear_tap(src, n_in);
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.w.push(w);
        taps.nearest
            .push(((src + 0.5).floor().max(0.0) as usize).min(n_in - 1));
    }
    taps
}

/// Output voxel `j` samples input coordinate `(j + 0.5) * ratio - 0.5`.
fn sample_grid(
    data: &[f32],
    in_shape: Shape,
    out_shape: Shape,
    ratio: [f64; 3],
    nearest: bool,
    exec: Exec,
) -> Vec<f32> {
    let taps: Vec<AxisTaps> = (0..3)
        .map(|a| axis_taps(in_shape[a], out_shape[a], ratio[a]))
        .collect();
    let mut out = vec![0f32; shape_len(out_shape)];
    let slice = out_shape[1] * out_shape[2];
    exec.for_each_chunk(&mut out, slice, |z, chunk| {
        for y in 0..out_shape[1] {
            for x in 0..out_shape[2] {
                let v = if nearest {
                    let idx = (taps[0].nearest[z] * in_shape[1] + taps[1].nearest[y]) * in_shape[2]
                        + taps[2].nearest[x];
                    data[idx]
                } else {
                    trilinear(
                        data,
                        in_shape,
                        [taps[0].lo[z], taps[1].lo[y], taps[2].lo[x]],
                        [taps[0].hi[z], taps[1].hi[y], taps[2].hi[x]],
                        [taps[0].w[z], taps[1].w[y], taps[2].w[x]],
                    ) as f32
                };
                chunk[y * out_shape[2] + x] = v;
            }
        }
    });
    out
}
