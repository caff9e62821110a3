use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxdet::detect::DetectionSet;
use voxdet::froc::{evaluate, FP_RATES};
use voxdet::{BoxF, Exec};

const GRID: i64 = 8;

type IBox = ([i64; 3], [i64; 3]);

fn random_box(rng: &mut ChaCha8Rng) -> IBox {
    let mut min = [0; 3];
    let mut max = [0; 3];
    for a in 0..3 {
        let lo = rng.random_range(0..GRID - 1);
        min[a] = lo;
        max[a] = rng.random_range(lo + 1..=GRID);
    }
    (min, max)
}

fn voxels(b: &IBox) -> impl Iterator<Item = [i64; 3]> + '_ {
    (b.0[0]..b.1[0]).flat_map(move |z| (b.0[1]..b.1[1]).flat_map(move |y| (b.0[2]..b.1[2]).map(move |x| [z, y, x])))
}

fn inside(v: [i64; 3], b: &IBox) -> bool {
    (0..3).all(|a| b.0[a] <= v[a] && v[a] < b.1[a])
}

fn counted_iou(a: &IBox, b: &IBox) -> f64 {
    let inter = voxels(a).filter(|&v| inside(v, b)).count();
    let union = voxels(a).count() + voxels(b).count() - inter;
    inter as f64 / union as f64
}

struct Image {
    gt: Vec<IBox>,
    preds: Vec<(IBox, f64)>,
}

fn tie_order(a: &(IBox, f64), b: &(IBox, f64)) -> Ordering {
    let key = |x: &(IBox, f64)| [x.0 .0, x.0 .1].concat();
    b.1.total_cmp(&a.1).then_with(|| key(a).cmp(&key(b)))
}

/// Counts TPs among predictions scoring at least `t`, matching from scratch.
fn tp_fp_at(img: &Image, t: f64, thr: f64) -> (usize, usize) {
    let mut kept: Vec<&(IBox, f64)> = img.preds.iter().filter(|p| p.1 >= t).collect();
    kept.sort_by(|a, b| tie_order(a, b));
    let mut used = vec![false; img.gt.len()];
    let mut tp = 0;
    for p in &kept {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in img.gt.iter().enumerate() {
            if used[g] {
                continue;
            }
            let v = counted_iou(&p.0, gt);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= thr {
                used[g] = true;
                tp += 1;
            }
        }
    }
    (tp, kept.len() - tp)
}

fn brute_force_froc(images: &[Image], thr: f64, rates: &[f64]) -> f64 {
    let total_gt: usize = images.iter().map(|i| i.gt.len()).sum();
    let mut thresholds: Vec<f64> = images.iter().flat_map(|i| i.preds.iter().map(|p| p.1)).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let (tp, fp) = images
                .iter()
                .map(|i| tp_fp_at(i, t, thr))
                .fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
            (fp as f64 / images.len() as f64, tp as f64 / total_gt as f64)
        })
        .collect();
    let mut sum = 0.0;
    for &r in rates {
        let mut best = 0.0f64;
        for &(fpi, sens) in &points {
            if fpi <= r && sens > best {
                best = sens;
            }
        }
        sum += best;
    }
    sum / rates.len() as f64
}

fn to_boxf(b: &IBox) -> BoxF {
    BoxF::new(b.0.map(|v| v as f64), b.1.map(|v| v as f64)).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> Vec<Image> {
    loop {
        let n = rng.random_range(1..=5);
        let images: Vec<Image> = (0..n)
            .map(|_| {
                let gt = (0..rng.random_range(0..=6)).map(|_| random_box(rng)).collect();
                let preds = (0..rng.random_range(0..=6))
                    .map(|_| (random_box(rng), rng.random_range(1..=5) as f64 / 5.0))
                    .collect();
                Image { gt, preds }
            })
            .collect();
        if images.iter().any(|i| !i.gt.is_empty()) {
            return images;
        }
    }
}

#[test]
fn evaluator_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let images = random_instance(&mut rng);
        let pairs: Vec<(DetectionSet, Vec<BoxF>)> = images
            .iter()
            .enumerate()
            .map(|(k, img)| {
                let preds = img
                    .preds
                    .iter()
                    .map(|(b, s)| to_boxf(b).with_score(*s).unwrap())
                    .collect();
                (DetectionSet::new(format!("i{k}"), preds), img.gt.iter().map(to_boxf).collect())
            })
            .collect();
        for thr in [0.1, 0.3] {
            let got = evaluate(&pairs, thr, &FP_RATES, Exec::Sequential).unwrap().curve.score;
            let want = brute_force_froc(&images, thr, &FP_RATES);
            assert_eq!(got, want, "case {case} iou {thr}");
        }
    }
}
