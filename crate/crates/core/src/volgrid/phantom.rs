use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{shape_len, Shape, Volume};
use crate::annotate::{rasterize, BoxF, Ellipsoid};
use crate::exec::Exec;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomLesion {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub intensity: f64,
}

impl PhantomLesion {
    fn bounds(&self) -> Result<BoxF> {
        let min = [0, 1, 2].map(|a| self.center[a] - self.radii[a]);
        let max = [0, 1, 2].map(|a| self.center[a] + self.radii[a]);
        BoxF::new(min, max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: Shape,
    pub lesions: Vec<PhantomLesion>,
    pub background_noise_sigma: f64,
    pub seed: u64,
}

/// Renders ellipsoidal lesions over Gaussian background noise.
///
/// Lesion voxels hold `intensity + noise`; where lesions overlap the later one
/// wins. Returned boxes are the tight voxel bounds of each lesion's own
/// footprint, in lesion order. Output is a pure function of `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, Vec<BoxF>)> {
    if spec.shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("phantom shape {:?}", spec.shape)));
    }
    if !(spec.background_noise_sigma >= 0.0 && spec.background_noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument("noise sigma must be finite and >= 0".into()));
    }
    let shape = spec.shape;
    let mut ellipsoids = Vec::with_capacity(spec.lesions.len());
    let mut boxes = Vec::with_capacity(spec.lesions.len());
    for (index, lesion) in spec.lesions.iter().enumerate() {
        if lesion.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidArgument(format!("lesion {index} has non-positive radius")));
        }
        let b = lesion.bounds()?;
        if (0..3).any(|a| b.min[a] < 0.0 || b.max[a] > shape[a] as f64) {
            return Err(Error::LesionOutOfBounds { index });
        }
        let e = Ellipsoid::from_box(&b);
        let tight = e.footprint_bounds(shape).ok_or(Error::LesionOutOfBounds { index })?;
        boxes.push(tight);
        ellipsoids.push(e);
    }

    let mut data = background_noise(spec);
    let labels = rasterize(&ellipsoids, shape, Exec::default());
    for (v, &k) in data.iter_mut().zip(&labels) {
        if k > 0.0 {
            *v = (spec.lesions[k as usize - 1].intensity + *v as f64) as f32;
        }
    }
    let vol = Volume::image(shape, data)?;
    Ok((vol, boxes))
}

fn background_noise(spec: &PhantomSpec) -> Vec<f32> {
    let shape = spec.shape;
    let mut data = vec![0f32; shape_len(shape)];
    if spec.background_noise_sigma > 0.0 {
        Exec::default().for_each_chunk(&mut data, shape[1] * shape[2], |z, chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(z as u64);
            for v in chunk.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = (n * spec.background_noise_sigma) as f32;
            }
        });
    }
    data
}

/// Draws 1..=`max_lesions` non-touching lesions with integer centres and radii.
///
/// Lesion bounding boxes keep a gap of at least `gap` voxels to each other and
/// one voxel to the volume border.
pub fn random_phantom_spec(
    shape: Shape,
    max_lesions: usize,
    radius_range: [u32; 2],
    intensity_range: [f64; 2],
    noise_sigma: f64,
    seed: u64,
) -> Result<PhantomSpec> {
    let [rmin, rmax] = radius_range;
    if rmin == 0 || rmin > rmax || max_lesions == 0 {
        return Err(Error::InvalidArgument("bad phantom lesion parameters".into()));
    }
    if shape.iter().any(|&n| (n as u64) < 2 * rmax as u64 + 2) {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} too small for radius {rmax}"
        )));
    }
    const GAP: f64 = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=max_lesions);
    let mut lesions: Vec<PhantomLesion> = Vec::with_capacity(count);
    let mut attempts = 0;
    while lesions.len() < count && attempts < 10_000 {
        attempts += 1;
        let radii = [0; 3].map(|_| rng.random_range(rmin..=rmax) as f64);
        let center = [0, 1, 2].map(|a| {
            let lo = radii[a] as i64 + 1;
            let hi = shape[a] as i64 - radii[a] as i64 - 1;
            rng.random_range(lo..=hi) as f64
        });
        let intensity = if intensity_range[0] < intensity_range[1] {
            rng.random_range(intensity_range[0]..intensity_range[1])
        } else {
            intensity_range[0]
        };
        let clear = lesions.iter().all(|o| {
            (0..3).any(|a| (center[a] - o.center[a]).abs() >= radii[a] + o.radii[a] + GAP)
        });
        if clear {
            lesions.push(PhantomLesion {
                center,
                radii,
                intensity,
            });
        }
    }
    Ok(PhantomSpec {
        shape,
        lesions,
        background_noise_sigma: noise_sigma,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lesion(center: [f64; 3], radii: [f64; 3], intensity: f64) -> PhantomLesion {
        PhantomLesion {
            center,
            radii,
            intensity,
        }
    }

    #[test]
    fn empty_phantom_is_zero() {
        let spec = PhantomSpec {
            shape: [8, 9, 10],
            lesions: vec![],
            background_noise_sigma: 0.0,
            seed: 1,
        };
        let (vol, boxes) = generate_phantom(&spec).unwrap();
        assert!(boxes.is_empty());
        assert!(vol.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sphere_box_is_tight() {
        let spec = PhantomSpec {
            shape: [64, 64, 64],
            lesions: vec![lesion([32.0; 3], [8.0; 3], 1.0)],
            background_noise_sigma: 0.0,
            seed: 0,
        };
        let (vol, boxes) = generate_phantom(&spec).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].min, [24.0; 3]);
        assert_eq!(boxes[0].max, [40.0; 3]);
        // enumerate the rendered voxels directly
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for z in 0..64 {
            for y in 0..64 {
                for x in 0..64 {
                    if vol.get(z, y, x) > 0.5 {
                        let v = [z, y, x];
                        for a in 0..3 {
                            lo[a] = lo[a].min(v[a]);
                            hi[a] = hi[a].max(v[a] + 1);
                        }
                    }
                }
            }
        }
        assert_eq!(lo, [24; 3]);
        assert_eq!(hi, [40; 3]);
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = random_phantom_spec([40, 48, 56], 3, [3, 7], [0.8, 1.2], 0.05, 42).unwrap();
        let (a, ba) = generate_phantom(&spec).unwrap();
        let (b, bb) = generate_phantom(&spec).unwrap();
        assert_eq!(ba, bb);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut other = spec.clone();
        other.seed = 43;
        let (c, _) = generate_phantom(&other).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn out_of_bounds_lesion_rejected() {
        let spec = PhantomSpec {
            shape: [16, 16, 16],
            lesions: vec![lesion([8.0; 3], [4.0; 3], 1.0), lesion([3.0, 8.0, 8.0], [4.0; 3], 1.0)],
            background_noise_sigma: 0.0,
            seed: 0,
        };
        assert!(matches!(generate_phantom(&spec), Err(Error::LesionOutOfBounds { index: 1 })));
    }

    #[test]
    fn later_lesion_wins_overlap() {
        let spec = PhantomSpec {
            shape: [20, 20, 20],
            lesions: vec![lesion([10.0; 3], [5.0; 3], 1.0), lesion([10.0; 3], [2.0; 3], 3.0)],
            background_noise_sigma: 0.1,
            seed: 5,
        };
        let (vol, boxes) = generate_phantom(&spec).unwrap();
        let noise = background_noise(&spec);
        let c = vol.index(10, 10, 10);
        assert_eq!(vol.data()[c], (3.0 + noise[c] as f64) as f32);
        let e = vol.index(10, 10, 5);
        assert_eq!(vol.data()[e], (1.0 + noise[e] as f64) as f32);
        assert_eq!(boxes[1].min, [8.0; 3]);
    }

    #[test]
    fn random_specs_are_disjoint_and_inside() {
        for seed in 0..50 {
            let spec = random_phantom_spec([64, 48, 48], 3, [2, 8], [1.0, 1.0], 0.0, seed).unwrap();
            let (_, boxes) = generate_phantom(&spec).unwrap();
            assert!(!boxes.is_empty() && boxes.len() <= 3);
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    assert_eq!(crate::annotate::iou(&boxes[i], &boxes[j]), 0.0);
                }
            }
        }
    }
}
