use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use voxdet::annotate::ellipsoid_mask_with;
use voxdet::augment::{apply_intensity_with, apply_spatial_with, AugParams, IntensityOp, Sample};
use voxdet::detect::BlobDetector;
use voxdet::sampler::tile_volume;
use voxdet::volgrid::{generate_phantom, random_phantom_spec, resample_with, Volume};
use voxdet::{BoxF, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn phantom(shape: [usize; 3]) -> (Volume, Vec<BoxF>) {
    let spec = random_phantom_spec(shape, 3, [6, 14], [1.0, 2.0], 0.02, 7).unwrap();
    generate_phantom(&spec).unwrap()
}

fn bench_resample(c: &mut Criterion) {
    let (vol, _) = phantom([96, 128, 128]);
    let vol = vol.with_geometry([2.5, 0.8, 0.8], [0.0; 3]).unwrap();
    let mut group = c.benchmark_group("resample");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "96x128x128"), &exec, |b, &exec| {
            b.iter(|| resample_with(&vol, [1.40, 1.43, 1.43], exec).unwrap())
        });
    }
    group.finish();
}

fn bench_mask(c: &mut Criterion) {
    let boxes: Vec<BoxF> = (0..8)
        .map(|i| {
            let o = 8.0 + 12.0 * i as f64;
            BoxF::new([o, o, 10.0], [o + 20.0, o + 14.0, 100.0]).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("ellipsoid_mask");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "128^3"), &exec, |b, &exec| {
            b.iter(|| ellipsoid_mask_with(&boxes, [128, 128, 128], exec).unwrap())
        });
    }
    group.finish();
}

fn bench_augment(c: &mut Criterion) {
    let (vol, boxes) = phantom([96, 96, 96]);
    let sample = Sample::from_boxes(vol, &boxes).unwrap();
    let warp = AugParams {
        scale: Some(1.1),
        rotation_deg: Some([8.0, -5.0, 3.0]),
        mirror: [true, false, true],
        ..Default::default()
    };
    let blur = AugParams {
        intensity: vec![IntensityOp::GaussianBlur { sigma: 1.2 }, IntensityOp::MedianFilter { radius: 1 }],
        ..Default::default()
    };
    let mut group = c.benchmark_group("augment");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(format!("spatial_{name}"), "96^3"), &exec, |b, &exec| {
            b.iter(|| apply_spatial_with(&sample, &warp, exec))
        });
        group.bench_with_input(BenchmarkId::new(format!("filters_{name}"), "96^3"), &exec, |b, &exec| {
            b.iter(|| apply_intensity_with(sample.image(), &blur, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_tiled_detection(c: &mut Criterion) {
    let (vol, _) = phantom([128, 128, 128]);
    let tiles = tile_volume(vol.shape(), [64, 64, 64], 0.5).unwrap();
    let det = BlobDetector::default();
    let mut group = c.benchmark_group("tiled_detection");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "128^3"), &exec, |b, &exec| {
            b.iter(|| det.detect_tiled("bench", &vol, &tiles, 0.0, 0.5, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_resample, bench_mask, bench_augment, bench_tiled_detection);
criterion_main!(benches);
