//! Joint image / pseudo-mask / box augmentation.
//!
//! Spatial transforms are composed into one coordinate map so the image and
//! mask are resampled once. Boxes are never transformed directly: they are
//! re-derived from the transformed mask.

mod intensity;
mod scheme;
mod spatial;

pub use scheme::{
    draw_params, scheme_table, AugEntry, AugParams, AugScheme, IntensityOp, Rot90, SchemeExtras, SchemeName,
    Transform,
};
pub use spatial::{axis_map, AxisMap};

use crate::annotate::{boxes_from_mask, ellipsoid_mask_with};
use crate::volgrid::{Volume, VolumeKind};
use crate::{BoxF, Error, Exec, Result};
use spatial::{warp, Affine};

/// An image with its instance mask; box `k` is the tight box of instance `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    image: Volume,
    mask: Volume,
    boxes: Vec<BoxF>,
}

impl Sample {
    /// Builds the ellipsoid pseudo-mask for `boxes` and re-derives the boxes
    /// from it. Boxes whose ellipsoid is fully overwritten or outside the grid
    /// are dropped.
    pub fn from_boxes(image: Volume, boxes: &[BoxF]) -> Result<Self> {
        let mask = ellipsoid_mask_with(boxes, image.shape(), Exec::default())?;
        Sample::from_mask(image, mask, boxes)
    }

    /// Uses an existing instance mask; `source` supplies class labels for
    /// instance `k + 1` when present.
    pub fn from_mask(image: Volume, mask: Volume, source: &[BoxF]) -> Result<Self> {
        if image.kind() != VolumeKind::Image || mask.kind() != VolumeKind::Label {
            return Err(Error::InvalidVolume("sample needs an image and a label volume".into()));
        }
        if image.shape() != mask.shape() {
            return Err(Error::InvalidVolume(format!(
                "image shape {:?} differs from mask shape {:?}",
                image.shape(),
                mask.shape()
            )));
        }
        let max = mask.data().iter().fold(0f32, |m, &v| m.max(v)) as u32;
        let labels: Vec<Option<u32>> = (0..max as usize).map(|k| source.get(k).and_then(|b| b.label)).collect();
        Ok(relabel(image, mask, &labels))
    }

    pub fn image(&self) -> &Volume {
        &self.image
    }

    pub fn mask(&self) -> &Volume {
        &self.mask
    }

    pub fn boxes(&self) -> &[BoxF] {
        &self.boxes
    }

    pub fn into_parts(self) -> (Volume, Volume, Vec<BoxF>) {
        (self.image, self.mask, self.boxes)
    }
}

/// Drops empty instances, renumbers the rest consecutively and derives boxes.
fn relabel(image: Volume, mut mask: Volume, labels: &[Option<u32>]) -> Sample {
    let found = boxes_from_mask(&mask, labels.len() as u32);
    let mut remap = vec![0f32; labels.len() + 1];
    let mut boxes = Vec::new();
    for (k, b) in found.into_iter().enumerate() {
        if let Some(mut b) = b {
            b.label = labels[k];
            boxes.push(b);
            remap[k + 1] = boxes.len() as f32;
        }
    }
    if remap.iter().enumerate().any(|(k, &v)| v != k as f32) {
        for v in mask.data_mut() {
            *v = remap[*v as usize];
        }
    }
    Sample { image, mask, boxes }
}

pub fn apply_spatial(sample: &Sample, params: &AugParams) -> Sample {
    apply_spatial_with(sample, params, Exec::default())
}

/// Applies zoom, continuous rotation, transposition, quarter turns and
/// mirroring in one resampling pass.
pub fn apply_spatial_with(sample: &Sample, params: &AugParams, exec: Exec) -> Sample {
    if !params.has_spatial() {
        return sample.clone();
    }
    let shape = sample.image.shape();
    let map = axis_map(params);
    let affine = Affine::from_params(params, shape);
    let (img, out_shape) = warp(sample.image.data(), shape, affine.as_ref(), map, false, exec);
    let (msk, _) = warp(sample.mask.data(), shape, affine.as_ref(), map, true, exec);
    let spacing = map.src.map(|s| sample.image.spacing()[s]);
    let origin = sample.image.origin();
    let image = Volume::from_parts_unchecked(out_shape, spacing, origin, VolumeKind::Image, sample.image.dtype(), img);
    let mask = Volume::from_parts_unchecked(out_shape, spacing, origin, VolumeKind::Label, sample.mask.dtype(), msk);
    let labels: Vec<_> = sample.boxes.iter().map(|b| b.label).collect();
    relabel(image, mask, &labels)
}

pub fn apply_intensity(image: &Volume, params: &AugParams) -> Result<Volume> {
    apply_intensity_with(image, params, Exec::default())
}

/// Applies the drawn intensity transforms in table row order.
pub fn apply_intensity_with(image: &Volume, params: &AugParams, exec: Exec) -> Result<Volume> {
    if image.kind() != VolumeKind::Image {
        return Err(Error::InvalidVolume("intensity transforms need an image volume".into()));
    }
    let mut ops: Vec<&IntensityOp> = params.intensity.iter().collect();
    ops.sort_by_key(|o| o.transform());
    let mut data = image.data().to_vec();
    for op in ops {
        intensity::apply_op(&mut data, image.shape(), op, exec);
    }
    Ok(image.with_data(data))
}

/// Spatial then intensity transforms.
pub fn augment(sample: &Sample, params: &AugParams, exec: Exec) -> Result<Sample> {
    let mut out = apply_spatial_with(sample, params, exec);
    if !params.intensity.is_empty() {
        out.image = apply_intensity_with(&out.image, params, exec)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::iou;

    fn sample(shape: [usize; 3], boxes: &[BoxF]) -> Sample {
        let n: usize = shape.iter().product();
        let img = Volume::image(shape, (0..n).map(|i| (i % 97) as f32).collect()).unwrap();
        Sample::from_boxes(img, boxes).unwrap()
    }

    fn bx(min: [f64; 3], max: [f64; 3]) -> BoxF {
        BoxF::new(min, max).unwrap()
    }

    #[test]
    fn identity_is_bit_exact() {
        let s = sample([12, 14, 16], &[bx([2.0, 3.0, 4.0], [7.0, 10.0, 9.0])]);
        let out = augment(&s, &AugParams::default(), Exec::default()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn mirror_z() {
        let s = sample([20, 16, 16], &[bx([2.0, 3.0, 4.0], [7.0, 10.0, 9.0])]);
        let b = &s.boxes()[0];
        let p = AugParams {
            mirror: [true, false, false],
            ..Default::default()
        };
        let out = apply_spatial(&s, &p);
        let o = &out.boxes()[0];
        assert_eq!((o.min[0], o.max[0]), (20.0 - b.max[0], 20.0 - b.min[0]));
        assert_eq!((&o.min[1..], &o.max[1..]), (&b.min[1..], &b.max[1..]));
        assert_eq!(out.mask().get(19 - 4, 6, 6), s.mask().get(4, 6, 6));
    }

    #[test]
    fn transpose_reverses_axes() {
        let s = sample([10, 12, 14], &[bx([1.0, 2.0, 3.0], [4.0, 9.0, 12.0])]);
        let p = AugParams {
            transpose: Some([2, 1, 0]),
            ..Default::default()
        };
        let out = apply_spatial(&s, &p);
        assert_eq!(out.image().shape(), [14, 12, 10]);
        let b = &s.boxes()[0];
        let o = &out.boxes()[0];
        assert_eq!(o.min, [b.min[2], b.min[1], b.min[0]]);
        assert_eq!(o.max, [b.max[2], b.max[1], b.max[0]]);
    }

    #[test]
    fn continuous_rotation_loses_tightness() {
        let s = sample([40, 40, 40], &[bx([10.0, 14.0, 5.0], [30.0, 26.0, 35.0])]);
        let b = s.boxes()[0].clone();
        let mut worst: f64 = 1.0;
        for theta in [15.0, 30.0, 45.0] {
            let p = AugParams {
                rotation_deg: Some([theta, 0.0, 0.0]),
                ..Default::default()
            };
            let out = apply_spatial(&s, &p);
            let got = &out.boxes()[0];
            let af = Affine::from_params(&p, [40, 40, 40]).unwrap();
            // corners of the voxel-centre hull of the original box
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for c in 0..8 {
                let q = [0, 1, 2].map(|a| if c >> a & 1 == 1 { b.max[a] - 1.0 } else { b.min[a] });
                let f = af.forward(q);
                for a in 0..3 {
                    lo[a] = lo[a].min(f[a]);
                    hi[a] = hi[a].max(f[a] + 1.0);
                }
            }
            let naive = bx(lo, hi);
            worst = worst.min(iou(got, &naive));
            // every foreground voxel lies inside the derived box
            let m = out.mask();
            for z in 0..40 {
                for y in 0..40 {
                    for x in 0..40 {
                        if m.get(z, y, x) == 1.0 {
                            let v = [z, y, x].map(|v| v as f64);
                            assert!((0..3).all(|a| got.min[a] <= v[a] && v[a] < got.max[a]));
                        }
                    }
                }
            }
        }
        assert!(worst < 1.0);
    }

    #[test]
    fn vanished_instances_are_dropped() {
        let s = sample(
            [20, 20, 20],
            &[
                bx([0.0, 0.0, 0.0], [4.0, 4.0, 4.0]).with_label(7),
                bx([8.0, 8.0, 8.0], [12.0, 12.0, 12.0]).with_label(9),
            ],
        );
        assert_eq!(s.boxes().len(), 2);
        let p = AugParams {
            scale: Some(1.6),
            ..Default::default()
        };
        let out = apply_spatial(&s, &p);
        assert_eq!(out.boxes().len(), 1);
        assert_eq!(out.boxes()[0].label, Some(9));
        assert!(out.mask().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn intensity_leaves_mask_and_boxes() {
        let s = sample([16, 16, 16], &[bx([2.0, 3.0, 4.0], [9.0, 10.0, 11.0])]);
        let scheme = scheme_table(SchemeName::B);
        for seed in 0..20 {
            let mut p = draw_params(&scheme, seed);
            p.scale = None;
            p.rotation_deg = None;
            p.transpose = None;
            p.rot90 = None;
            p.mirror = [false; 3];
            let out = augment(&s, &p, Exec::default()).unwrap();
            assert_eq!(out.mask(), s.mask());
            assert_eq!(out.boxes(), s.boxes());
        }
    }

    #[test]
    fn label_rejected_by_intensity() {
        let m = Volume::zeros([2, 2, 2], VolumeKind::Label).unwrap();
        assert!(apply_intensity(&m, &AugParams::default()).is_err());
    }

    #[test]
    fn modes_agree() {
        let s = sample([18, 20, 22], &[bx([2.0, 3.0, 4.0], [12.0, 14.0, 11.0])]);
        let scheme = scheme_table(SchemeName::B);
        for seed in 0..8 {
            let p = draw_params(&scheme, seed);
            let a = augment(&s, &p, Exec::Sequential).unwrap();
            let b = augment(&s, &p, Exec::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }
}
