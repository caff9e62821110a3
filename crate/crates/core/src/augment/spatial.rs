use serde::{Deserialize, Serialize};

use super::scheme::{AugParams, Rot90};
use crate::volgrid::{sample_linear, shape_len, Shape};
use crate::{BoxF, Exec};

/// A signed axis permutation on voxel indices: output axis `a` reads input
/// axis `src[a]`, reversed when `flip[a]` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMap {
    pub src: [usize; 3],
    pub flip: [bool; 3],
}

impl Default for AxisMap {
    fn default() -> Self {
        AxisMap::IDENTITY
    }
}

impl AxisMap {
    pub const IDENTITY: AxisMap = AxisMap {
        src: [0, 1, 2],
        flip: [false; 3],
    };

    pub fn transpose(perm: [usize; 3]) -> Self {
        AxisMap {
            src: perm,
            flip: [false; 3],
        }
    }

    pub fn mirror(flip: [bool; 3]) -> Self {
        AxisMap { src: [0, 1, 2], flip }
    }

    /// One quarter turn in the `(p, q)` plane: swap the two axes, then
    /// reverse the first one.
    pub fn quarter_turn(axes: [usize; 2]) -> Self {
        let [p, q] = axes;
        let mut m = AxisMap::IDENTITY;
        m.src[p] = q;
        m.src[q] = p;
        m.flip[p] = true;
        m
    }

    pub fn rot90(r: Rot90) -> Self {
        let step = AxisMap::quarter_turn(r.axes);
        (0..r.turns % 4).fold(AxisMap::IDENTITY, |m, _| m.then(step))
    }

    /// The map applying `self` first and `next` second.
    pub fn then(self, next: AxisMap) -> AxisMap {
        AxisMap {
            src: next.src.map(|s| self.src[s]),
            flip: [0, 1, 2].map(|a| next.flip[a] ^ self.flip[next.src[a]]),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == AxisMap::IDENTITY
    }

    pub fn output_shape(&self, shape: Shape) -> Shape {
        self.src.map(|s| shape[s])
    }

    /// Input voxel index feeding output voxel `j`.
    #[inline]
    pub fn source_index(&self, j: [usize; 3], out_shape: Shape) -> [usize; 3] {
        let mut i = [0; 3];
        for a in 0..3 {
            i[self.src[a]] = if self.flip[a] { out_shape[a] - 1 - j[a] } else { j[a] };
        }
        i
    }

    pub fn map_box(&self, b: &BoxF, in_shape: Shape) -> BoxF {
        let out_shape = self.output_shape(in_shape);
        let mut r = b.clone();
        for a in 0..3 {
            let (lo, hi) = (b.min[self.src[a]], b.max[self.src[a]]);
            (r.min[a], r.max[a]) = if self.flip[a] {
                let n = out_shape[a] as f64;
                (n - hi, n - lo)
            } else {
                (lo, hi)
            };
        }
        r
    }
}

/// The right-angle part of `params`, composed as transpose, quarter turns,
/// then mirroring.
pub fn axis_map(params: &AugParams) -> AxisMap {
    let t = params.transpose.map_or(AxisMap::IDENTITY, AxisMap::transpose);
    let r = params.rot90.map_or(AxisMap::IDENTITY, AxisMap::rot90);
    t.then(r).then(AxisMap::mirror(params.mirror))
}

/// Inverse of the continuous part (zoom, then rotation about the centre).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Affine {
    // source = center + m * (dest - center)
    m: [[f64; 3]; 3],
    center: [f64; 3],
}

fn rotation(deg: [f64; 3]) -> [[f64; 3]; 3] {
    // Rz * Ry * Rx with the angle about axis z acting in the (y, x) plane etc.
    let [az, ay, ax] = deg.map(f64::to_radians);
    let rz = plane_rotation(1, 2, az);
    let ry = plane_rotation(0, 2, ay);
    let rx = plane_rotation(0, 1, ax);
    matmul(matmul(rz, ry), rx)
}

fn plane_rotation(p: usize, q: usize, theta: f64) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (a, row) in m.iter_mut().enumerate() {
        row[a] = 1.0;
    }
    let (s, c) = theta.sin_cos();
    m[p][p] = c;
    m[p][q] = -s;
    m[q][p] = s;
    m[q][q] = c;
    m
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

fn transpose3(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

impl Affine {
    pub(crate) fn from_params(params: &AugParams, shape: Shape) -> Option<Self> {
        if params.scale.is_none() && params.rotation_deg.is_none() {
            return None;
        }
        let s = params.scale.unwrap_or(1.0);
        let rt = transpose3(rotation(params.rotation_deg.unwrap_or([0.0; 3])));
        let m = rt.map(|row| row.map(|v| v / s));
        Some(Affine {
            m,
            center: shape.map(|n| (n as f64 - 1.0) / 2.0),
        })
    }

    /// Forward map of a continuous point.
    #[cfg(test)]
    pub(crate) fn forward(&self, p: [f64; 3]) -> [f64; 3] {
        // m = R^T / s, so its inverse is m^T * s^2.
        let s2 = (0..3).map(|k| self.m[0][k] * self.m[0][k]).sum::<f64>();
        let d = [0, 1, 2].map(|a| p[a] - self.center[a]);
        [0, 1, 2].map(|a| self.center[a] + (0..3).map(|k| self.m[k][a] * d[k]).sum::<f64>() / s2)
    }

    #[inline]
    fn source(&self, q: [f64; 3]) -> [f64; 3] {
        let d = [0, 1, 2].map(|a| q[a] - self.center[a]);
        [0, 1, 2].map(|a| self.center[a] + self.m[a][0] * d[0] + self.m[a][1] * d[1] + self.m[a][2] * d[2])
    }
}

/// Resamples `data` through the continuous part then the axis map, in one
/// pass. Labels use nearest neighbour with zero outside the grid; images use
/// edge-clamped trilinear interpolation.
pub(crate) fn warp(
    data: &[f32],
    shape: Shape,
    affine: Option<&Affine>,
    map: AxisMap,
    nearest: bool,
    exec: Exec,
) -> (Vec<f32>, Shape) {
    let out_shape = map.output_shape(shape);
    let mut out = vec![0f32; shape_len(out_shape)];
    if out.is_empty() {
        return (out, out_shape);
    }
    let plane = out_shape[1] * out_shape[2];
    exec.for_each_chunk(&mut out, plane, |z, slice| {
        let mut k = 0;
        for y in 0..out_shape[1] {
            for x in 0..out_shape[2] {
                let i = map.source_index([z, y, x], out_shape);
                slice[k] = match affine {
                    None => data[(i[0] * shape[1] + i[1]) * shape[2] + i[2]],
                    Some(af) => {
                        let p = af.source(i.map(|v| v as f64));
                        if nearest {
                            nearest_or_zero(data, shape, p)
                        } else {
                            sample_linear(data, shape, p) as f32
                        }
                    }
                };
                k += 1;
            }
        }
    });
    (out, out_shape)
}

#[inline]
fn nearest_or_zero(data: &[f32], shape: Shape, p: [f64; 3]) -> f32 {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (p[a] + 0.5).floor();
        if !(r >= 0.0 && r < shape[a] as f64) {
            return 0.0;
        }
        idx[a] = r as usize;
    }
    data[(idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]]
}
