use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scheme::IntensityOp;
use crate::volgrid::{resize_linear, Shape};
use crate::Exec;

struct Stats {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

fn stats(data: &[f32]) -> Stats {
    let n = data.len().max(1) as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let (min, max) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    Stats {
        mean,
        std: var.sqrt(),
        min,
        max,
    }
}

/// Intensity scale for relative magnitudes; unit for a constant image.
fn scale_of(s: &Stats) -> f64 {
    if s.std > 0.0 {
        s.std
    } else {
        1.0
    }
}

pub(crate) fn apply_op(data: &mut Vec<f32>, shape: Shape, op: &IntensityOp, exec: Exec) {
    match *op {
        IntensityOp::GaussianNoise { sigma, seed } => {
            let sd = sigma * scale_of(&stats(data));
            exec.for_each_chunk(data, shape[1] * shape[2], |z, slice| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(z as u64);
                for v in slice.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v = (*v as f64 + sd * n) as f32;
                }
            });
        }
        IntensityOp::GaussianBlur { sigma } => *data = gaussian_blur(data, shape, sigma, exec),
        IntensityOp::MedianFilter { radius } => *data = median_filter(data, shape, radius, exec),
        IntensityOp::MultiplicativeBrightness { factor } => {
            data.iter_mut().for_each(|v| *v = (*v as f64 * factor) as f32);
        }
        IntensityOp::BrightnessGradient { amplitude, direction } => {
            let k = amplitude * scale_of(&stats(data));
            let u = |i: usize, n: usize| 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
            exec.for_each_chunk(data, shape[1] * shape[2], |z, slice| {
                let gz = direction[0] * u(z, shape[0]);
                for y in 0..shape[1] {
                    let gy = gz + direction[1] * u(y, shape[1]);
                    for x in 0..shape[2] {
                        let g = gy + direction[2] * u(x, shape[2]);
                        let v = &mut slice[y * shape[2] + x];
                        *v = (*v as f64 + k * g) as f32;
                    }
                }
            });
        }
        IntensityOp::Contrast { factor } => {
            let mean = stats(data).mean;
            data.iter_mut().for_each(|v| *v = (mean + factor * (*v as f64 - mean)) as f32);
        }
        IntensityOp::SimulateLowResolution { factor } => {
            let low = shape.map(|n| ((n as f64 / factor).round() as usize).clamp(1, n));
            if low != shape {
                let down = resize_linear(data, shape, low, exec);
                *data = resize_linear(&down, low, shape, exec);
            }
        }
        IntensityOp::Gamma { gamma } => apply_gamma(data, gamma, false, |_| true),
        IntensityOp::InverseGamma { gamma } => apply_gamma(data, gamma, true, |_| true),
        IntensityOp::LocalGamma { gamma, center, radius } => {
            let c = [0, 1, 2].map(|a| center[a] * shape[a] as f64);
            let r = radius * *shape.iter().min().expect("3 axes") as f64;
            let plane = shape[1] * shape[2];
            apply_gamma(data, gamma, false, |i| {
                let v = [i / plane, (i / shape[2]) % shape[1], i % shape[2]];
                (0..3).map(|a| (v[a] as f64 + 0.5 - c[a]).powi(2)).sum::<f64>() <= r * r
            });
        }
        IntensityOp::Sharpening { amount, sigma } => {
            let blurred = gaussian_blur(data, shape, sigma, exec);
            for (v, b) in data.iter_mut().zip(blurred) {
                *v = (*v as f64 + amount * (*v as f64 - b as f64)) as f32;
            }
        }
    }
}

/// Gamma on min-max normalised intensities, restricted to voxels where
/// `inside(index)` holds.
fn apply_gamma(data: &mut [f32], gamma: f64, inverse: bool, inside: impl Fn(usize) -> bool) {
    let s = stats(data);
    let range = s.max - s.min;
    if !(range > 0.0) {
        return;
    }
    for (i, v) in data.iter_mut().enumerate() {
        if !inside(i) {
            continue;
        }
        let n = ((*v as f64 - s.min) / range).clamp(0.0, 1.0);
        let g = if inverse { 1.0 - (1.0 - n).powf(gamma) } else { n.powf(gamma) };
        *v = (s.min + g * range) as f32;
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// 1-D convolution along `axis` with replicated edges.
fn convolve_axis(data: &[f32], shape: Shape, axis: usize, kernel: &[f64], exec: Exec) -> Vec<f32> {
    let r = (kernel.len() / 2) as i64;
    let n = shape[axis] as i64;
    let stride = [shape[1] * shape[2], shape[2], 1][axis];
    let mut out = vec![0f32; data.len()];
    exec.for_each_chunk(&mut out, shape[1] * shape[2], |z, slice| {
        let base = z * shape[1] * shape[2];
        for (k, o) in slice.iter_mut().enumerate() {
            let i = base + k;
            let pos = [z, k / shape[2], k % shape[2]][axis] as i64;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let p = (pos + t as i64 - r).clamp(0, n - 1);
                let j = (i as i64 + (p - pos) * stride as i64) as usize;
                acc += w * data[j] as f64;
            }
            *o = acc as f32;
        }
    });
    out
}

pub(crate) fn gaussian_blur(data: &[f32], shape: Shape, sigma: f64, exec: Exec) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return data.to_vec();
    }
    let a = convolve_axis(data, shape, 0, &k, exec);
    let b = convolve_axis(&a, shape, 1, &k, exec);
    convolve_axis(&b, shape, 2, &k, exec)
}

fn median_filter(data: &[f32], shape: Shape, radius: usize, exec: Exec) -> Vec<f32> {
    if radius == 0 {
        return data.to_vec();
    }
    let r = radius as i64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut out = vec![0f32; data.len()];
    exec.for_each_chunk(&mut out, shape[1] * shape[2], |z, slice| {
        let mut window = Vec::with_capacity((2 * radius + 1).pow(3));
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                window.clear();
                for dz in -r..=r {
                    let zz = clampi(z as i64 + dz, shape[0]);
                    for dy in -r..=r {
                        let yy = clampi(y as i64 + dy, shape[1]);
                        for dx in -r..=r {
                            let xx = clampi(x as i64 + dx, shape[2]);
                            window.push(data[(zz * shape[1] + yy) * shape[2] + xx]);
                        }
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                slice[y * shape[2] + x] = *m;
            }
        }
    });
    out
}
