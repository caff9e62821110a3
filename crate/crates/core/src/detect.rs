//! Threshold blob detector, hard NMS, cross-tile stitching and two-model
//! ensemble fusion.
//!
//! The blob detector is a deterministic stand-in for a trained network: it
//! reports 6-connected components above an intensity threshold. Stitching and
//! fusion are model-agnostic and operate on scored boxes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::annotate::{iou, BoxF};
use crate::exec::Exec;
use crate::sampler::{extract_patch, PatchSpec};
use crate::volgrid::{Shape, Volume};
use crate::{Error, Result};

pub const DEFAULT_STITCH_IOU: f64 = 0.5;
pub const DEFAULT_ENSEMBLE_IOU: f64 = 0.5;

/// Scored boxes predicted for one image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub boxes: Vec<BoxF>,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BoxF>) -> Self {
        DetectionSet {
            image_id: image_id.into(),
            boxes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.boxes {
            b.validate()?;
            if b.score.is_none() {
                return Err(Error::MissingScore);
            }
        }
        Ok(())
    }
}

/// Descending score, then ascending corners.
pub(crate) fn score_order(a: &BoxF, b: &BoxF) -> Ordering {
    let sa = a.score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa).then_with(|| a.corner_cmp(b))
}

/// Components of `{v : vol(v) >= threshold}` with at least `min_voxels` voxels,
/// each as its tight box scored `min(1, mean intensity / (2 * threshold))`.
/// Boxes come out in raster order of each component's first voxel.
pub fn blob_detect(vol: &Volume, intensity_threshold: f32, min_voxels: usize) -> DetectionSet {
    let shape = vol.shape();
    let data = vol.data();
    let (ny, nx) = (shape[1], shape[2]);
    let plane = ny * nx;
    let mut visited = vec![false; data.len()];
    let mut stack: Vec<usize> = Vec::new();
    let mut boxes = Vec::new();
    for start in 0..data.len() {
        if visited[start] || !(data[start] >= intensity_threshold) {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut count = 0usize;
        let mut sum = 0f64;
        while let Some(i) = stack.pop() {
            let v = [i / plane, (i / nx) % ny, i % nx];
            count += 1;
            sum += data[i] as f64;
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a] + 1);
            }
            let mut visit = |j: usize| {
                if !visited[j] && data[j] >= intensity_threshold {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if v[0] > 0 {
                visit(i - plane);
            }
            if v[0] + 1 < shape[0] {
                visit(i + plane);
            }
            if v[1] > 0 {
                visit(i - nx);
            }
            if v[1] + 1 < ny {
                visit(i + nx);
            }
            if v[2] > 0 {
                visit(i - 1);
            }
            if v[2] + 1 < nx {
                visit(i + 1);
            }
        }
        if count < min_voxels.max(1) {
            continue;
        }
        let mean = sum / count as f64;
        let score = if intensity_threshold > 0.0 {
            (mean / (2.0 * intensity_threshold as f64)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        boxes.push(BoxF {
            min: lo.map(|v| v as f64),
            max: hi.map(|v| v as f64),
            score: Some(score),
            label: None,
        });
    }
    DetectionSet::new(String::new(), boxes)
}

/// Greedy hard NMS; a box is dropped iff its IoU with a kept box exceeds
/// `iou_threshold`. Output is in descending score order.
pub fn nms(dets: &[BoxF], iou_threshold: f64) -> Result<Vec<BoxF>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::InvalidArgument(format!("iou threshold {iou_threshold}")));
    }
    if dets.iter().any(|b| b.score.is_none()) {
        return Err(Error::MissingScore);
    }
    let mut order: Vec<&BoxF> = dets.iter().collect();
    order.sort_by(|a, b| score_order(a, b));
    let mut kept: Vec<BoxF> = Vec::new();
    for b in order {
        if kept.iter().all(|k| iou(k, b) <= iou_threshold) {
            kept.push(b.clone());
        }
    }
    Ok(kept)
}

/// Moves per-tile detections into volume coordinates, clips them to the
/// volume and suppresses duplicates with NMS.
pub fn stitch(
    image_id: &str,
    volume_shape: Shape,
    per_patch: &[(PatchSpec, DetectionSet)],
    iou_threshold: f64,
) -> Result<DetectionSet> {
    let mut pooled = Vec::new();
    for (patch, set) in per_patch {
        set.validate()?;
        let offset = patch.origin.map(|o| o as f64);
        pooled.extend(
            set.boxes
                .iter()
                .filter_map(|b| b.translated(offset).clipped(volume_shape)),
        );
    }
    Ok(DetectionSet::new(image_id, nms(&pooled, iou_threshold)?))
}

/// Drops boxes that touch a tile face lying inside the volume: such a blob may
/// be cut by the tile border and is expected to be seen whole in a
/// neighbouring tile.
pub fn discard_truncated(set: &DetectionSet, patch: &PatchSpec, volume_shape: Shape) -> DetectionSet {
    let boxes = set
        .boxes
        .iter()
        .filter(|b| {
            (0..3).all(|a| {
                let inner_low = patch.origin[a] > 0;
                let inner_high = patch.origin[a] + (patch.size[a] as i64) < volume_shape[a] as i64;
                !(inner_low && b.min[a] <= 0.0) && !(inner_high && b.max[a] >= patch.size[a] as f64)
            })
        })
        .cloned()
        .collect();
    DetectionSet::new(set.image_id.clone(), boxes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobDetector {
    pub intensity_threshold: f32,
    pub min_voxels: usize,
    /// Apply [`discard_truncated`] to every tile before stitching.
    pub discard_truncated: bool,
}

impl Default for BlobDetector {
    fn default() -> Self {
        BlobDetector {
            intensity_threshold: 0.5,
            min_voxels: 8,
            discard_truncated: true,
        }
    }
}

impl BlobDetector {
    pub fn detect(&self, vol: &Volume) -> DetectionSet {
        blob_detect(vol, self.intensity_threshold, self.min_voxels)
    }

    /// Per-tile detections in tile-local coordinates, in tile order.
    pub fn detect_tiles(
        &self,
        vol: &Volume,
        tiles: &[PatchSpec],
        pad_value: f32,
        exec: Exec,
    ) -> Vec<(PatchSpec, DetectionSet)> {
        exec.map(tiles, |tile| {
            let patch = extract_patch(vol, tile, pad_value);
            let mut set = self.detect(&patch);
            if self.discard_truncated {
                set = discard_truncated(&set, tile, vol.shape());
            }
            (*tile, set)
        })
    }

    /// Sliding-window inference followed by [`stitch`].
    pub fn detect_tiled(
        &self,
        image_id: &str,
        vol: &Volume,
        tiles: &[PatchSpec],
        pad_value: f32,
        stitch_iou: f64,
        exec: Exec,
    ) -> Result<DetectionSet> {
        let per_tile = self.detect_tiles(vol, tiles, pad_value, exec);
        stitch(image_id, vol.shape(), &per_tile, stitch_iou)
    }
}

/// Fuses two models' detections for the same image.
///
/// Boxes from both sets are pooled and visited in descending score order;
/// each unassigned box seeds a cluster that absorbs every unassigned box with
/// IoU >= `iou_threshold` to the seed. A cluster yields the score-weighted mean
/// of its members' corners and the mean member score scaled by
/// `contributing models / 2`.
pub fn ensemble_fuse(a: &DetectionSet, b: &DetectionSet, iou_threshold: f64) -> Result<DetectionSet> {
    if a.image_id != b.image_id {
        return Err(Error::ImageIdMismatch(a.image_id.clone(), b.image_id.clone()));
    }
    a.validate()?;
    b.validate()?;
    let mut pooled: Vec<(&BoxF, usize)> = a
        .boxes
        .iter()
        .map(|x| (x, 0))
        .chain(b.boxes.iter().map(|x| (x, 1)))
        .collect();
    pooled.sort_by(|x, y| score_order(x.0, y.0));
    let mut taken = vec![false; pooled.len()];
    let mut fused = Vec::new();
    for i in 0..pooled.len() {
        if taken[i] {
            continue;
        }
        taken[i] = true;
        let seed = pooled[i].0;
        let mut members = vec![pooled[i]];
        for j in i + 1..pooled.len() {
            if !taken[j] && iou(seed, pooled[j].0) >= iou_threshold {
                taken[j] = true;
                members.push(pooled[j]);
            }
        }
        fused.push(fuse_cluster(seed, &members));
    }
    fused.sort_by(score_order);
    Ok(DetectionSet::new(a.image_id.clone(), fused))
}

fn fuse_cluster(seed: &BoxF, members: &[(&BoxF, usize)]) -> BoxF {
    let scores: Vec<f64> = members.iter().map(|(b, _)| b.score.unwrap_or(0.0)).collect();
    let total: f64 = scores.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        scores.clone()
    } else {
        vec![1.0; members.len()]
    };
    let wsum: f64 = weights.iter().sum();
    // averaging offsets from the seed keeps identical members exact
    let avg = |pick: fn(&BoxF) -> [f64; 3]| {
        let base = pick(seed);
        [0, 1, 2].map(|a| {
            let d: f64 = members
                .iter()
                .zip(&weights)
                .map(|((b, _), w)| w * (pick(b)[a] - base[a]))
                .sum();
            base[a] + d / wsum
        })
    };
    let min = avg(|b| b.min);
    let max = avg(|b| b.max);
    let mut models = [false; 2];
    for (_, m) in members {
        models[*m] = true;
    }
    let agreeing = models.iter().filter(|&&m| m).count() as f64;
    let score = (total / members.len() as f64) * agreeing / 2.0;
    BoxF {
        min,
        max,
        score: Some(score.clamp(0.0, 1.0)),
        label: seed.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{generate_phantom, random_phantom_spec, PhantomLesion, PhantomSpec};

    fn sb(min: [f64; 3], max: [f64; 3], s: f64) -> BoxF {
        BoxF::new(min, max).unwrap().with_score(s).unwrap()
    }

    #[test]
    fn blob_on_zero_volume() {
        let vol = Volume::image([8, 8, 8], vec![0.0; 512]).unwrap();
        assert!(blob_detect(&vol, 0.5, 1).boxes.is_empty());
    }

    #[test]
    fn blob_matches_phantom_boxes() {
        let spec = PhantomSpec {
            shape: [48, 40, 40],
            lesions: vec![
                PhantomLesion { center: [12.0, 12.0, 12.0], radii: [6.0, 5.0, 4.0], intensity: 1.0 },
                PhantomLesion { center: [34.0, 26.0, 28.0], radii: [7.0, 6.0, 8.0], intensity: 0.9 },
            ],
            background_noise_sigma: 0.02,
            seed: 3,
        };
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let det = blob_detect(&vol, 0.45, 4);
        assert_eq!(det.boxes.len(), 2);
        for (d, g) in det.boxes.iter().zip(&gt) {
            assert_eq!(iou(d, g), 1.0);
            assert!(d.score.unwrap() > 0.9);
        }
        let one = PhantomSpec { lesions: spec.lesions[..1].to_vec(), ..spec.clone() };
        let (vol, gt) = generate_phantom(&one).unwrap();
        let det = blob_detect(&vol, 0.45, 4);
        assert_eq!(det.boxes.len(), 1);
        assert_eq!(det.boxes[0].min, gt[0].min);
        assert_eq!(det.boxes[0].max, gt[0].max);
    }

    #[test]
    fn min_voxels_filters_specks() {
        let mut data = vec![0.0; 5 * 5 * 5];
        data[0] = 1.0;
        data[62] = 1.0;
        data[63] = 1.0;
        let vol = Volume::image([5, 5, 5], data).unwrap();
        assert_eq!(blob_detect(&vol, 0.5, 2).boxes.len(), 1);
        assert_eq!(blob_detect(&vol, 0.5, 1).boxes.len(), 2);
    }

    #[test]
    fn diagonal_neighbours_are_separate() {
        let mut data = vec![0.0; 27];
        data[0] = 1.0;
        data[13] = 1.0;
        let vol = Volume::image([3, 3, 3], data).unwrap();
        assert_eq!(blob_detect(&vol, 0.5, 1).boxes.len(), 2);
    }

    #[test]
    fn nms_examples() {
        let a = sb([0.0; 3], [10.0; 3], 0.9);
        assert_eq!(nms(std::slice::from_ref(&a), 0.5).unwrap(), vec![a.clone()]);
        let dup = sb([0.0; 3], [10.0; 3], 0.8);
        assert_eq!(nms(&[dup, a.clone()], 0.5).unwrap(), vec![a.clone()]);
        let third = sb([5.0, 0.0, 0.0], [15.0, 10.0, 10.0], 0.7);
        assert_eq!(nms(&[third.clone(), a.clone()], 0.5).unwrap(), vec![a, third]);
        assert!(matches!(nms(&[BoxF::new([0.0; 3], [1.0; 3]).unwrap()], 0.5), Err(Error::MissingScore)));
    }

    #[test]
    fn nms_ties_use_corners() {
        let a = sb([5.0; 3], [6.0; 3], 0.5);
        let b = sb([1.0; 3], [2.0; 3], 0.5);
        assert_eq!(nms(&[a.clone(), b.clone()], 0.5).unwrap(), vec![b, a]);
    }

    #[test]
    fn nms_invariants_on_random_sets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(0..12);
            let dets: Vec<BoxF> = (0..n)
                .map(|_| {
                    let lo = [0; 3].map(|_| rng.random_range(0..10) as f64);
                    let hi = lo.map(|l| l + rng.random_range(1..6) as f64);
                    sb(lo, hi, rng.random_range(0..10) as f64 / 10.0)
                })
                .collect();
            let thr = rng.random_range(0.0..1.0);
            let kept = nms(&dets, thr).unwrap();
            assert!(kept.iter().all(|k| dets.contains(k)));
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    assert!(iou(&kept[i], &kept[j]) <= thr);
                }
            }
            assert_eq!(nms(&kept, thr).unwrap(), kept);
        }
    }

    #[test]
    fn stitch_examples() {
        let tile = PatchSpec::new([64, 0, 0], [192, 192, 192]).unwrap();
        let local = sb([10.0, 20.0, 30.0], [20.0, 30.0, 40.0], 0.8);
        let out = stitch("x", [256, 192, 192], &[(tile, DetectionSet::new("x", vec![local]))], 0.5).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert_eq!(out.boxes[0].min, [74.0, 20.0, 30.0]);
        assert_eq!(out.boxes[0].max, [84.0, 30.0, 40.0]);

        let t0 = PatchSpec::new([0, 0, 0], [192; 3]).unwrap();
        let g = sb([100.0, 10.0, 10.0], [120.0, 30.0, 30.0], 0.9);
        let in_t1 = g.translated([-64.0, 0.0, 0.0]).with_score(0.7).unwrap();
        let out = stitch(
            "x",
            [256, 192, 192],
            &[(t0, DetectionSet::new("x", vec![g.clone()])), (tile, DetectionSet::new("x", vec![in_t1]))],
            0.5,
        )
        .unwrap();
        assert_eq!(out.boxes, vec![g]);
    }

    #[test]
    fn split_object_survives_as_two_boxes() {
        // object [80, 160) along z; tiles [0, 128) and [112, 240) each see part of it
        let t0 = PatchSpec::new([0, 0, 0], [128, 32, 32]).unwrap();
        let t1 = PatchSpec::new([112, 0, 0], [128, 32, 32]).unwrap();
        let part0 = sb([80.0, 0.0, 0.0], [128.0, 10.0, 10.0], 0.8);
        let part1 = sb([0.0, 0.0, 0.0], [48.0, 10.0, 10.0], 0.8);
        let g0 = part0.clone();
        let g1 = part1.translated([112.0, 0.0, 0.0]);
        assert!((iou(&g0, &g1) - 0.2).abs() < 1e-12);
        let out = stitch(
            "x",
            [240, 32, 32],
            &[(t0, DetectionSet::new("x", vec![part0])), (t1, DetectionSet::new("x", vec![part1]))],
            0.5,
        )
        .unwrap();
        assert_eq!(out.boxes.len(), 2);
    }

    #[test]
    fn truncated_boxes_dropped_only_on_inner_faces() {
        let tile = PatchSpec::new([64, 0, 0], [192, 192, 192]).unwrap();
        let set = DetectionSet::new(
            "x",
            vec![
                sb([0.0, 5.0, 5.0], [10.0, 9.0, 9.0], 0.5),
                sb([182.0, 0.0, 5.0], [192.0, 9.0, 9.0], 0.5),
                sb([50.0, 0.0, 0.0], [60.0, 9.0, 192.0], 0.5),
            ],
        );
        let kept = discard_truncated(&set, &tile, [256, 192, 192]);
        assert_eq!(kept.boxes.len(), 2);
        assert_eq!(kept.boxes[0].min[0], 182.0);
    }

    #[test]
    fn tiled_equals_whole_volume() {
        for seed in 0..4 {
            let spec = random_phantom_spec([96, 64, 64], 3, [3, 9], [0.8, 1.2], 0.02, seed).unwrap();
            let (vol, _) = generate_phantom(&spec).unwrap();
            let det = BlobDetector { intensity_threshold: 0.4, min_voxels: 4, discard_truncated: true };
            let whole = nms(&det.detect(&vol).boxes, 0.5).unwrap();
            let tiles = crate::sampler::tile_volume(vol.shape(), [64, 64, 64], 0.5).unwrap();
            let seq = det.detect_tiled("p", &vol, &tiles, 0.0, 0.5, Exec::Sequential).unwrap();
            let par = det.detect_tiled("p", &vol, &tiles, 0.0, 0.5, Exec::Parallel).unwrap();
            assert_eq!(seq, par);
            assert_eq!(seq.boxes, whole);
        }
    }

    #[test]
    fn fusion_examples() {
        let a = DetectionSet::new("i", vec![sb([0.0; 3], [10.0; 3], 0.6)]);
        let self_fused = ensemble_fuse(&a, &a, 0.5).unwrap();
        assert_eq!(self_fused.boxes, a.boxes);

        let only_a = DetectionSet::new("i", vec![sb([0.0; 3], [10.0; 3], 0.8)]);
        let empty = DetectionSet::new("i", vec![]);
        let f = ensemble_fuse(&only_a, &empty, 0.5).unwrap();
        assert!((f.boxes[0].score.unwrap() - 0.4).abs() < 1e-15);

        let b = DetectionSet::new("i", vec![sb([2.0, 0.0, 0.0], [12.0, 10.0, 10.0], 0.2)]);
        let f = ensemble_fuse(&a, &b, 0.5).unwrap();
        assert_eq!(f.boxes.len(), 1);
        let fb = &f.boxes[0];
        assert!((fb.min[0] - 0.5).abs() < 1e-12);
        assert_eq!([fb.min[1], fb.min[2]], [0.0, 0.0]);
        assert!((fb.max[0] - 10.5).abs() < 1e-12);
        assert!((fb.score.unwrap() - 0.4).abs() < 1e-12);

        let other = DetectionSet::new("j", vec![]);
        assert!(matches!(ensemble_fuse(&a, &other, 0.5), Err(Error::ImageIdMismatch(..))));
    }

    #[test]
    fn fusion_is_symmetric() {
        let a = DetectionSet::new(
            "i",
            vec![sb([0.0; 3], [10.0; 3], 0.7), sb([20.0; 3], [25.0; 3], 0.3)],
        );
        let b = DetectionSet::new(
            "i",
            vec![sb([1.0; 3], [11.0; 3], 0.9), sb([40.0; 3], [45.0; 3], 0.5)],
        );
        assert_eq!(ensemble_fuse(&a, &b, 0.5).unwrap(), ensemble_fuse(&b, &a, 0.5).unwrap());
    }
}
