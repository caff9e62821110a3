//! FROC evaluation: greedy score-ordered matching, the sensitivity versus
//! false-positives-per-image curve, the mean-sensitivity score at fixed
//! operating points, and seeded cross-validation folds.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::{iou, BoxF, BoxTable};
use crate::detect::{score_order, DetectionSet};
use crate::exec::Exec;
use crate::{Error, Result};

/// False positives per image at which sensitivity is read off.
pub const FP_RATES: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// IoU thresholds reported by default; the second is the challenge cutoff.
pub const EVAL_IOUS: [f64; 2] = [0.1, 0.3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// TP flag per prediction, in input order.
    pub is_tp: Vec<bool>,
    /// Hit flag per ground-truth box, in input order.
    pub gt_hit: Vec<bool>,
    /// Prediction indices in processing order (descending score).
    pub order: Vec<usize>,
}

/// Predictions are visited by descending score (ties by corner order). Each
/// takes the unmatched ground truth with the highest IoU (lowest index on
/// ties) and is a true positive iff that IoU reaches `iou_threshold`.
pub fn match_detections(preds: &DetectionSet, gts: &[BoxF], iou_threshold: f64) -> Result<MatchResult> {
    if preds.boxes.iter().any(|b| b.score.is_none()) {
        return Err(Error::MissingScore);
    }
    let mut order: Vec<usize> = (0..preds.boxes.len()).collect();
    order.sort_by(|&a, &b| score_order(&preds.boxes[a], &preds.boxes[b]).then(a.cmp(&b)));
    let mut is_tp = vec![false; preds.boxes.len()];
    let mut gt_hit = vec![false; gts.len()];
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_hit[g] {
                continue;
            }
            let v = iou(&preds.boxes[p], gt);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_threshold {
                gt_hit[g] = true;
                is_tp[p] = true;
            }
        }
    }
    Ok(MatchResult { is_tp, gt_hit, order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub fp_per_image: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fp_per_image: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    pub iou_threshold: f64,
    pub n_images: usize,
    pub total_gt: usize,
    /// One point per distinct score, thresholds descending.
    pub points: Vec<FrocPoint>,
    pub operating_points: Vec<OperatingPoint>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub n_gt: usize,
    pub n_pred: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocReport {
    #[serde(flatten)]
    pub curve: FrocCurve,
    pub per_image: Vec<ImageSummary>,
}

/// FROC curve at the default operating points.
pub fn froc_curve(per_image: &[(DetectionSet, Vec<BoxF>)], iou_threshold: f64) -> Result<FrocCurve> {
    Ok(evaluate(per_image, iou_threshold, &FP_RATES, Exec::default())?.curve)
}

/// Full evaluation; operating-point sensitivity at rate `r` is the largest
/// curve sensitivity with `fp_per_image <= r`, or 0 if none qualifies.
pub fn evaluate(
    per_image: &[(DetectionSet, Vec<BoxF>)],
    iou_threshold: f64,
    fp_rates: &[f64],
    exec: Exec,
) -> Result<FrocReport> {
    if per_image.is_empty() {
        return Err(Error::InvalidArgument("FROC needs at least one image".into()));
    }
    if fp_rates.is_empty() {
        return Err(Error::InvalidArgument("no FP operating points".into()));
    }
    let total_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
    if total_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let matches = exec.map(per_image, |(preds, gts)| match_detections(preds, gts, iou_threshold));
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut summaries = Vec::with_capacity(per_image.len());
    for ((preds, gts), m) in per_image.iter().zip(matches) {
        let m = m?;
        let tp = m.is_tp.iter().filter(|&&t| t).count();
        summaries.push(ImageSummary {
            image_id: preds.image_id.clone(),
            n_gt: gts.len(),
            n_pred: preds.boxes.len(),
            tp,
            fp: preds.boxes.len() - tp,
        });
        scored.extend(
            preds
                .boxes
                .iter()
                .zip(&m.is_tp)
                .map(|(b, &t)| (b.score.unwrap_or(0.0), t)),
        );
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_images = per_image.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(FrocPoint {
            threshold,
            fp_per_image: fp as f64 / n_images,
            sensitivity: tp as f64 / total_gt as f64,
        });
    }
    let operating_points: Vec<OperatingPoint> = fp_rates
        .iter()
        .map(|&r| OperatingPoint {
            fp_per_image: r,
            sensitivity: points
                .iter()
                .filter(|p| p.fp_per_image <= r)
                .map(|p| p.sensitivity)
                .fold(0.0, f64::max),
        })
        .collect();
    let score = operating_points.iter().map(|o| o.sensitivity).sum::<f64>() / operating_points.len() as f64;
    Ok(FrocReport {
        curve: FrocCurve {
            iou_threshold,
            n_images: per_image.len(),
            total_gt,
            points,
            operating_points,
            score,
        },
        per_image: summaries,
    })
}

/// Tab-separated `threshold fp_per_image sensitivity` rows with a header.
pub fn curve_tsv(curve: &FrocCurve) -> String {
    let mut out = String::from("threshold\tfp_per_image\tsensitivity\n");
    for p in &curve.points {
        out.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.fp_per_image, p.sensitivity));
    }
    out
}

/// Pairs predictions with ground truth over the union of image ids (plus any
/// `extra_ids` that have neither), sorted by id.
pub fn pair_tables(gt: &BoxTable, pred: &BoxTable, extra_ids: &[String]) -> Vec<(DetectionSet, Vec<BoxF>)> {
    let ids: BTreeSet<&String> = gt.keys().chain(pred.keys()).chain(extra_ids).collect();
    ids.into_iter()
        .map(|id| {
            (
                DetectionSet::new(id.clone(), pred.get(id).cloned().unwrap_or_default()),
                gt.get(id).cloned().unwrap_or_default(),
            )
        })
        .collect()
}

/// Seeded shuffle followed by round-robin assignment to `n_folds` folds.
pub fn split_folds(image_ids: &[String], n_folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if n_folds < 2 || n_folds > image_ids.len() {
        return Err(Error::TooFewIds {
            ids: image_ids.len(),
            folds: n_folds,
        });
    }
    let mut ids = image_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); n_folds];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % n_folds].push(id);
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sb(min: [f64; 3], max: [f64; 3], s: f64) -> BoxF {
        BoxF::new(min, max).unwrap().with_score(s).unwrap()
    }

    fn cube(at: f64) -> BoxF {
        BoxF::new([at; 3], [at + 10.0; 3]).unwrap()
    }

    #[test]
    fn matching_rules() {
        let gt = vec![cube(0.0)];
        let m = match_detections(&DetectionSet::new("a", vec![sb([0.0; 3], [10.0; 3], 0.5)]), &gt, 0.3).unwrap();
        assert_eq!(m.is_tp, vec![true]);

        let two = DetectionSet::new("a", vec![sb([0.0; 3], [10.0; 3], 0.8), sb([0.0; 3], [10.0; 3], 0.9)]);
        let m = match_detections(&two, &gt, 0.3).unwrap();
        assert_eq!(m.order, vec![1, 0]);
        assert_eq!(m.is_tp, vec![false, true]);
        assert_eq!(m.gt_hit, vec![true]);

        // IoU exactly 0.25: overlap 5*10*10 = 500 of union 1000 + 1500 - 500
        let gt = vec![cube(0.0)];
        let pp = DetectionSet::new("a", vec![sb([0.0, 0.0, 5.0], [10.0, 10.0, 20.0], 0.5)]);
        assert_eq!(iou(&pp.boxes[0], &gt[0]), 0.25);
        assert_eq!(match_detections(&pp, &gt, 0.3).unwrap().is_tp, vec![false]);
        assert_eq!(match_detections(&pp, &gt, 0.1).unwrap().is_tp, vec![true]);
    }

    #[test]
    fn perfect_and_empty() {
        let data = vec![
            (DetectionSet::new("a", vec![sb([0.0; 3], [10.0; 3], 0.9)]), vec![cube(0.0)]),
            (DetectionSet::new("b", vec![sb([5.0; 3], [15.0; 3], 0.4)]), vec![cube(5.0)]),
        ];
        assert_eq!(froc_curve(&data, 0.3).unwrap().score, 1.0);
        let empty: Vec<_> = data.iter().map(|(d, g)| (DetectionSet::new(d.image_id.clone(), vec![]), g.clone())).collect();
        let c = froc_curve(&empty, 0.3).unwrap();
        assert_eq!(c.score, 0.0);
        assert!(c.points.is_empty());
    }

    #[test]
    fn two_image_example() {
        let data = vec![
            (DetectionSet::new("a", vec![sb([0.0; 3], [10.0; 3], 0.9)]), vec![cube(0.0)]),
            (DetectionSet::new("b", vec![sb([50.0; 3], [60.0; 3], 0.8)]), vec![cube(5.0)]),
        ];
        let c = froc_curve(&data, 0.3).unwrap();
        let pts: Vec<_> = c.points.iter().map(|p| (p.fp_per_image, p.sensitivity)).collect();
        assert_eq!(pts, vec![(0.0, 0.5), (0.5, 0.5)]);
        assert!(c.operating_points.iter().all(|o| o.sensitivity == 0.5));
        assert_eq!(c.score, 0.5);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let data = vec![(DetectionSet::new("a", vec![]), vec![])];
        assert!(matches!(froc_curve(&data, 0.3), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn folds() {
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let f = split_folds(&ids, 5, 1).unwrap();
        assert!(f.iter().all(|x| x.len() == 2));
        assert_eq!(f, split_folds(&ids, 5, 1).unwrap());
        let mut all: Vec<_> = f.concat();
        all.sort();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(all, sorted);

        let pool: Vec<String> = (0..880).map(|i| format!("s{i:03}")).collect();
        let sizes: Vec<_> = split_folds(&pool, 5, 7).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![176; 5]);
        let uneven: Vec<_> = split_folds(&pool[..13], 5, 7).unwrap().iter().map(Vec::len).collect();
        assert!(uneven.iter().max().unwrap() - uneven.iter().min().unwrap() <= 1);
        assert!(matches!(split_folds(&ids[..3], 5, 0), Err(Error::TooFewIds { .. })));
        assert!(split_folds(&ids, 1, 0).is_err());
    }

    #[test]
    fn curve_tsv_format() {
        let data = vec![(DetectionSet::new("a", vec![sb([0.0; 3], [10.0; 3], 0.9)]), vec![cube(0.0)])];
        let c = froc_curve(&data, 0.3).unwrap();
        assert_eq!(curve_tsv(&c), "threshold\tfp_per_image\tsensitivity\n0.9\t0\t1\n");
    }
}
