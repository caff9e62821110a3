//! Box geometry, ellipsoid pseudo-masks, mask-to-box derivation, IoU and the
//! annotation / prediction CSV format.
//!
//! Boxes are half-open `[min, max)` in continuous voxel coordinates; voxel `v`
//! occupies `[v, v + 1)` and is tested at its centre `v + 0.5`.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::volgrid::{shape_len, Shape, Volume};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

impl BoxF {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = BoxF {
            min,
            max,
            score: None,
            label: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite()) {
                return Err(Error::InvalidBox(format!("non-finite corner on axis {a}")));
            }
            if !(self.min[a] < self.max[a]) {
                return Err(Error::DegenerateBox { axis: a });
            }
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidBox(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn translated(&self, offset: [f64; 3]) -> BoxF {
        BoxF {
            min: [0, 1, 2].map(|a| self.min[a] + offset[a]),
            max: [0, 1, 2].map(|a| self.max[a] + offset[a]),
            ..self.clone()
        }
    }

    /// Intersection with `[0, shape)`, or `None` when nothing remains.
    pub fn clipped(&self, shape: Shape) -> Option<BoxF> {
        let min = [0, 1, 2].map(|a| self.min[a].max(0.0));
        let max = [0, 1, 2].map(|a| self.max[a].min(shape[a] as f64));
        (0..3).all(|a| min[a] < max[a]).then(|| BoxF {
            min,
            max,
            ..self.clone()
        })
    }

    pub fn intersects_volume(&self, shape: Shape) -> bool {
        self.clipped(shape).is_some()
    }

    /// Ordering on `(min, max)` corners, used to break score ties.
    pub fn corner_cmp(&self, other: &BoxF) -> std::cmp::Ordering {
        self.min
            .iter()
            .chain(&self.max)
            .zip(other.min.iter().chain(&other.max))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Intersection over union of two boxes, using continuous volumes.
pub fn iou(a: &BoxF, b: &BoxF) -> f64 {
    let mut inter = 1.0;
    for k in 0..3 {
        let lo = a.min[k].max(b.min[k]);
        let hi = a.max[k].min(b.max[k]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Ellipsoid inscribed in a box: centre `(min + max) / 2`, radii `(max - min) / 2`.
///
/// Membership of integer-cornered boxes is decided in exact integer
/// arithmetic so mask/box round trips never depend on rounding.
#[derive(Clone, Debug)]
pub(crate) struct Ellipsoid {
    min: [f64; 3],
    max: [f64; 3],
    exact: Option<([i64; 3], [i64; 3])>,
}

const EXACT_LIMIT: f64 = (1u64 << 20) as f64;

impl Ellipsoid {
    pub(crate) fn from_box(b: &BoxF) -> Self {
        let integral = b
            .min
            .iter()
            .chain(&b.max)
            .all(|v| v.fract() == 0.0 && v.abs() < EXACT_LIMIT);
        let exact = integral.then(|| {
            (
                [0, 1, 2].map(|a| (b.min[a] + b.max[a]) as i64),
                [0, 1, 2].map(|a| (b.max[a] - b.min[a]) as i64),
            )
        });
        Ellipsoid {
            min: b.min,
            max: b.max,
            exact,
        }
    }

    /// Voxel index ranges that can contain foreground, clipped to `shape`.
    pub(crate) fn voxel_range(&self, shape: Shape) -> Option<[Range<usize>; 3]> {
        let mut out = [0..0, 0..0, 0..0];
        for a in 0..3 {
            let lo = self.min[a].floor().max(0.0);
            let hi = self.max[a].ceil().min(shape[a] as f64);
            if hi <= lo {
                return None;
            }
            out[a] = lo as usize..hi as usize;
        }
        Some(out)
    }

    #[inline]
    pub(crate) fn contains(&self, v: [usize; 3]) -> bool {
        match self.exact {
            Some((sum, d)) => {
                // ((2v + 1 - (min + max)) / (max - min))^2 summed <= 1, cleared of denominators
                let a = [0, 1, 2].map(|k| (2 * v[k] as i64 + 1 - sum[k]) as i128);
                let d2 = d.map(|x| (x as i128) * (x as i128));
                let lhs = a[0] * a[0] * d2[1] * d2[2]
                    + a[1] * a[1] * d2[0] * d2[2]
                    + a[2] * a[2] * d2[0] * d2[1];
                lhs <= d2[0] * d2[1] * d2[2]
            }
            None => {
                let mut s = 0.0;
                for k in 0..3 {
                    let t = (2.0 * v[k] as f64 + 1.0 - (self.min[k] + self.max[k]))
                        / (self.max[k] - self.min[k]);
                    s += t * t;
                }
                s <= 1.0
            }
        }
    }

    /// Tight half-open bounds of the voxels inside the ellipsoid.
    pub(crate) fn footprint_bounds(&self, shape: Shape) -> Option<BoxF> {
        let [zr, yr, xr] = self.voxel_range(shape)?;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for z in zr {
            for y in yr.clone() {
                for x in xr.clone() {
                    if self.contains([z, y, x]) {
                        let v = [z, y, x];
                        for a in 0..3 {
                            lo[a] = lo[a].min(v[a]);
                            hi[a] = hi[a].max(v[a] + 1);
                        }
                    }
                }
            }
        }
        (lo[0] != usize::MAX).then(|| BoxF {
            min: lo.map(|v| v as f64),
            max: hi.map(|v| v as f64),
            score: None,
            label: None,
        })
    }
}

/// Label raster where ellipsoid `k` writes `k + 1`; later entries win.
pub(crate) fn rasterize(ellipsoids: &[Ellipsoid], shape: Shape, exec: Exec) -> Vec<f32> {
    let ranges: Vec<_> = ellipsoids.iter().map(|e| e.voxel_range(shape)).collect();
    let mut data = vec![0f32; shape_len(shape)];
    exec.for_each_chunk(&mut data, shape[1] * shape[2], |z, chunk| {
        for (k, (e, range)) in ellipsoids.iter().zip(&ranges).enumerate() {
            let Some([zr, yr, xr]) = range else { continue };
            if !zr.contains(&z) {
                continue;
            }
            for y in yr.clone() {
                for x in xr.clone() {
                    if e.contains([z, y, x]) {
                        chunk[y * shape[2] + x] = (k + 1) as f32;
                    }
                }
            }
        }
    });
    data
}

/// Pseudo-mask with one inscribed ellipsoid per box; instance `k + 1` for box `k`.
pub fn ellipsoid_mask(boxes: &[BoxF], shape: Shape) -> Result<Volume> {
    ellipsoid_mask_with(boxes, shape, Exec::default())
}

pub fn ellipsoid_mask_with(boxes: &[BoxF], shape: Shape, exec: Exec) -> Result<Volume> {
    if boxes.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("{} instances exceed u16 labels", boxes.len())));
    }
    for b in boxes {
        b.validate()?;
    }
    let ellipsoids: Vec<_> = boxes.iter().map(Ellipsoid::from_box).collect();
    Volume::label(shape, rasterize(&ellipsoids, shape, exec))
}

/// Tight half-open box around the voxels labelled `instance`.
pub fn box_from_mask(mask: &Volume, instance: u32) -> Result<BoxF> {
    if instance == 0 {
        return Err(Error::InstanceNotFound(0));
    }
    let all = boxes_from_mask(mask, instance);
    all.into_iter()
        .nth(instance as usize - 1)
        .flatten()
        .ok_or(Error::InstanceNotFound(instance))
}

/// Tight boxes for instances `1..=max_instance` in one pass; `None` where absent.
pub fn boxes_from_mask(mask: &Volume, max_instance: u32) -> Vec<Option<BoxF>> {
    let n = max_instance as usize;
    let mut lo = vec![[usize::MAX; 3]; n];
    let mut hi = vec![[0usize; 3]; n];
    let shape = mask.shape();
    let mut i = 0;
    let data = mask.data();
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let k = data[i] as usize;
                i += 1;
                if k == 0 || k > n {
                    continue;
                }
                let (l, h) = (&mut lo[k - 1], &mut hi[k - 1]);
                let v = [z, y, x];
                for a in 0..3 {
                    l[a] = l[a].min(v[a]);
                    h[a] = h[a].max(v[a] + 1);
                }
            }
        }
    }
    lo.into_iter()
        .zip(hi)
        .map(|(l, h)| {
            (l[0] != usize::MAX).then(|| BoxF {
                min: l.map(|v| v as f64),
                max: h.map(|v| v as f64),
                score: None,
                label: None,
            })
        })
        .collect()
}

/// Boxes grouped by image id.
pub type BoxTable = BTreeMap<String, Vec<BoxF>>;

#[derive(Debug, Serialize, Deserialize)]
struct BoxRecord {
    image_id: String,
    min_z: f64,
    min_y: f64,
    min_x: f64,
    max_z: f64,
    max_y: f64,
    max_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GtRecord<'a> {
    image_id: &'a str,
    min_z: f64,
    min_y: f64,
    min_x: f64,
    max_z: f64,
    max_y: f64,
    max_x: f64,
}

/// Reads an annotation or prediction CSV. Row order within an image is kept.
pub fn read_boxes_csv(path: impl AsRef<Path>) -> Result<BoxTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_boxes(file)
}

pub fn read_boxes<R: std::io::Read>(reader: R) -> Result<BoxTable> {
    let mut table = BoxTable::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for rec in rdr.deserialize() {
        let r: BoxRecord = rec?;
        let mut b = BoxF::new([r.min_z, r.min_y, r.min_x], [r.max_z, r.max_y, r.max_x])?;
        if let Some(s) = r.score {
            b = b.with_score(s)?;
        }
        table.entry(r.image_id).or_default().push(b);
    }
    Ok(table)
}

/// Writes boxes as CSV; the `score` column is emitted when `with_scores`.
pub fn write_boxes_csv(path: impl AsRef<Path>, table: &BoxTable, with_scores: bool) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_boxes(file, table, with_scores)
}

pub fn write_boxes<W: std::io::Write>(writer: W, table: &BoxTable, with_scores: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    // explicit header so an empty table still produces one
    let mut header = vec!["image_id", "min_z", "min_y", "min_x", "max_z", "max_y", "max_x"];
    if with_scores {
        header.push("score");
    }
    w.write_record(&header)?;
    for (id, boxes) in table {
        for b in boxes {
            if with_scores {
                let score = b.score.ok_or(Error::MissingScore)?;
                w.serialize(BoxRecord {
                    image_id: id.clone(),
                    min_z: b.min[0],
                    min_y: b.min[1],
                    min_x: b.min[2],
                    max_z: b.max[0],
                    max_y: b.max[1],
                    max_x: b.max[2],
                    score: Some(score),
                })?;
            } else {
                w.serialize(GtRecord {
                    image_id: id,
                    min_z: b.min[0],
                    min_y: b.min[1],
                    min_x: b.min[2],
                    max_z: b.max[0],
                    max_y: b.max[1],
                    max_x: b.max[2],
                })?;
            }
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
