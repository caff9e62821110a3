use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Augmentation transforms, in the row order of the scheme tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Rotation,
    Scaling,
    Rotation90,
    TransposeAxes,
    GaussianNoise,
    GaussianBlur,
    MedianFilter,
    MultiplicativeBrightness,
    BrightnessGradient,
    Contrast,
    SimulateLowResolution,
    Gamma,
    InverseGamma,
    LocalGamma,
    Sharpening,
    Mirror,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeName {
    /// Baseline: moderate continuous rotation, multiplicative brightness.
    A,
    /// Reduced rotation: small continuous rotation plus right-angle
    /// transforms and extra intensity transforms.
    B,
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(SchemeName::A),
            "B" | "b" => Ok(SchemeName::B),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeName::A => "A",
            SchemeName::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugEntry {
    pub transform: Transform,
    /// Probability that the transform is applied (per axis for mirroring).
    pub probability: f64,
    /// Magnitude range sampled uniformly; `None` for parameter-free transforms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<[f64; 2]>,
}

/// Parameters of transforms that need more than one magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeExtras {
    /// Local-gamma ball radius as a fraction of the smallest patch extent.
    pub local_gamma_radius: [f64; 2],
    pub median_radius: usize,
    /// Blur sigma of the unsharp mask.
    pub sharpen_sigma: f64,
}

impl Default for SchemeExtras {
    fn default() -> Self {
        SchemeExtras {
            local_gamma_radius: [0.1, 0.4],
            median_radius: 1,
            sharpen_sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugScheme {
    pub name: SchemeName,
    pub entries: Vec<AugEntry>,
    #[serde(default)]
    pub extras: SchemeExtras,
}

fn entry(transform: Transform, probability: f64, magnitude: Option<[f64; 2]>) -> AugEntry {
    AugEntry {
        transform,
        probability,
        magnitude,
    }
}

// Magnitudes of the intensity rows are configuration defaults; only
// probabilities and the rotation / scaling ranges are fixed by the schemes.
const NOISE_SIGMA: [f64; 2] = [0.0, 0.1];
const BLUR_SIGMA: [f64; 2] = [0.5, 1.5];
const BRIGHTNESS: [f64; 2] = [0.75, 1.25];
const GRADIENT: [f64; 2] = [-0.3, 0.3];
const CONTRAST: [f64; 2] = [0.75, 1.25];
const LOW_RES: [f64; 2] = [1.0, 2.0];
const GAMMA: [f64; 2] = [0.7, 1.5];
const SHARPEN: [f64; 2] = [0.5, 1.5];

/// The two augmentation tables. Elastic deformation is in neither.
pub fn scheme_table(name: SchemeName) -> AugScheme {
    use Transform::*;
    let entries = match name {
        SchemeName::A => vec![
            entry(Rotation, 0.3, Some([-30.0, 30.0])),
            entry(Scaling, 0.2, Some([0.7, 1.4])),
            entry(GaussianNoise, 0.1, Some(NOISE_SIGMA)),
            entry(GaussianBlur, 0.2, Some(BLUR_SIGMA)),
            entry(MultiplicativeBrightness, 0.15, Some(BRIGHTNESS)),
            entry(Contrast, 0.15, Some(CONTRAST)),
            entry(Gamma, 0.3, Some(GAMMA)),
            entry(InverseGamma, 0.1, Some(GAMMA)),
            entry(Mirror, 0.5, None),
        ],
        SchemeName::B => vec![
            entry(Rotation, 0.1, Some([-10.0, 10.0])),
            entry(Scaling, 0.3, Some([0.65, 1.6])),
            entry(Rotation90, 0.5, None),
            entry(TransposeAxes, 0.5, None),
            entry(GaussianNoise, 0.1, Some(NOISE_SIGMA)),
            entry(GaussianBlur, 0.2, Some(BLUR_SIGMA)),
            entry(MedianFilter, 0.2, None),
            entry(BrightnessGradient, 0.3, Some(GRADIENT)),
            entry(Contrast, 0.2, Some(CONTRAST)),
            entry(SimulateLowResolution, 0.15, Some(LOW_RES)),
            entry(Gamma, 0.1, Some(GAMMA)),
            entry(InverseGamma, 0.1, Some(GAMMA)),
            entry(LocalGamma, 0.3, Some(GAMMA)),
            entry(Sharpening, 0.2, Some(SHARPEN)),
            entry(Mirror, 0.5, None),
        ],
    };
    AugScheme {
        name,
        entries,
        extras: SchemeExtras::default(),
    }
}

impl AugScheme {
    pub fn entry(&self, t: Transform) -> Option<&AugEntry> {
        self.entries.iter().find(|e| e.transform == t)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(0.0..=1.0).contains(&e.probability) {
                return Err(Error::Config(format!("{:?}: probability {} outside [0, 1]", e.transform, e.probability)));
            }
            if let Some([lo, hi]) = e.magnitude {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Config(format!("{:?}: bad magnitude range [{lo}, {hi}]", e.transform)));
                }
            }
        }
        let [lo, hi] = self.extras.local_gamma_radius;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config("bad local gamma radius range".into()));
        }
        if !(self.extras.sharpen_sigma > 0.0) {
            return Err(Error::Config("sharpen sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: AugScheme = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scheme serialises")
    }
}

/// Quarter turns in the plane of two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rot90 {
    pub axes: [usize; 2],
    pub turns: u8,
}

/// A concrete intensity transform with all randomness resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum IntensityOp {
    /// `sigma` is relative to the image standard deviation (unit scale for a
    /// constant image).
    GaussianNoise { sigma: f64, seed: u64 },
    GaussianBlur { sigma: f64 },
    MedianFilter { radius: usize },
    MultiplicativeBrightness { factor: f64 },
    /// Additive ramp `amplitude * std * (direction . u)` with `u` in `[-1, 1]^3`.
    BrightnessGradient { amplitude: f64, direction: [f64; 3] },
    Contrast { factor: f64 },
    SimulateLowResolution { factor: f64 },
    Gamma { gamma: f64 },
    InverseGamma { gamma: f64 },
    /// Ball centre as fractions of the shape, radius as a fraction of the
    /// smallest extent.
    LocalGamma { gamma: f64, center: [f64; 3], radius: f64 },
    Sharpening { amount: f64, sigma: f64 },
}

impl IntensityOp {
    pub fn transform(&self) -> Transform {
        match self {
            IntensityOp::GaussianNoise { .. } => Transform::GaussianNoise,
            IntensityOp::GaussianBlur { .. } => Transform::GaussianBlur,
            IntensityOp::MedianFilter { .. } => Transform::MedianFilter,
            IntensityOp::MultiplicativeBrightness { .. } => Transform::MultiplicativeBrightness,
            IntensityOp::BrightnessGradient { .. } => Transform::BrightnessGradient,
            IntensityOp::Contrast { .. } => Transform::Contrast,
            IntensityOp::SimulateLowResolution { .. } => Transform::SimulateLowResolution,
            IntensityOp::Gamma { .. } => Transform::Gamma,
            IntensityOp::InverseGamma { .. } => Transform::InverseGamma,
            IntensityOp::LocalGamma { .. } => Transform::LocalGamma,
            IntensityOp::Sharpening { .. } => Transform::Sharpening,
        }
    }
}

/// Sampled transform parameters for one sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    /// Isotropic zoom factor about the patch centre.
    pub scale: Option<f64>,
    /// Angles in degrees about the z, y and x axes.
    pub rotation_deg: Option<[f64; 3]>,
    /// Output axis `j` takes input axis `transpose[j]`.
    pub transpose: Option<[usize; 3]>,
    pub rot90: Option<Rot90>,
    pub mirror: [bool; 3],
    pub intensity: Vec<IntensityOp>,
}

impl AugParams {
    pub fn is_identity(&self) -> bool {
        !self.has_spatial() && self.intensity.is_empty()
    }

    pub fn has_spatial(&self) -> bool {
        self.scale.is_some()
            || self.rotation_deg.is_some()
            || self.transpose.is_some()
            || self.rot90.is_some()
            || self.mirror.iter().any(|&m| m)
    }
}

const PERMUTATIONS: [[usize; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
const PLANES: [[usize; 2]; 3] = [[1, 2], [0, 2], [0, 1]];

fn uniform(rng: &mut ChaCha8Rng, range: Option<[f64; 2]>, fallback: [f64; 2]) -> f64 {
    let [lo, hi] = range.unwrap_or(fallback);
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws each entry independently with its probability; magnitudes are
/// uniform over the entry range. Transposition picks one of the five
/// non-identity axis permutations; quarter turns pick a plane and 1..=3 turns.
pub fn draw_params(scheme: &AugScheme, seed: u64) -> AugParams {
    use Transform::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = AugParams::default();
    for e in &scheme.entries {
        if e.transform == Mirror {
            for a in 0..3 {
                params.mirror[a] = rng.random::<f64>() < e.probability;
            }
            continue;
        }
        if !(rng.random::<f64>() < e.probability) {
            continue;
        }
        let m = e.magnitude;
        match e.transform {
            Rotation => {
                params.rotation_deg = Some([0; 3].map(|_| uniform(&mut rng, m, [0.0, 0.0])));
            }
            Scaling => params.scale = Some(uniform(&mut rng, m, [1.0, 1.0])),
            Rotation90 => {
                params.rot90 = Some(Rot90 {
                    axes: *PLANES.choose(&mut rng).expect("non-empty"),
                    turns: rng.random_range(1..=3),
                });
            }
            TransposeAxes => params.transpose = Some(*PERMUTATIONS.choose(&mut rng).expect("non-empty")),
            GaussianNoise => params.intensity.push(IntensityOp::GaussianNoise {
                sigma: uniform(&mut rng, m, NOISE_SIGMA),
                seed: rng.random(),
            }),
            GaussianBlur => params.intensity.push(IntensityOp::GaussianBlur {
                sigma: uniform(&mut rng, m, BLUR_SIGMA),
            }),
            MedianFilter => params.intensity.push(IntensityOp::MedianFilter {
                radius: scheme.extras.median_radius,
            }),
            MultiplicativeBrightness => params.intensity.push(IntensityOp::MultiplicativeBrightness {
                factor: uniform(&mut rng, m, BRIGHTNESS),
            }),
            BrightnessGradient => {
                let amplitude = uniform(&mut rng, m, GRADIENT);
                let mut d: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    d = d.map(|v| v / norm);
                } else {
                    d = [1.0, 0.0, 0.0];
                }
                params.intensity.push(IntensityOp::BrightnessGradient { amplitude, direction: d });
            }
            Contrast => params.intensity.push(IntensityOp::Contrast {
                factor: uniform(&mut rng, m, CONTRAST),
            }),
            SimulateLowResolution => params.intensity.push(IntensityOp::SimulateLowResolution {
                factor: uniform(&mut rng, m, LOW_RES),
            }),
            Gamma => params.intensity.push(IntensityOp::Gamma {
                gamma: uniform(&mut rng, m, GAMMA),
            }),
            InverseGamma => params.intensity.push(IntensityOp::InverseGamma {
                gamma: uniform(&mut rng, m, GAMMA),
            }),
            LocalGamma => {
                let gamma = uniform(&mut rng, m, GAMMA);
                let center = [0; 3].map(|_| rng.random::<f64>());
                let radius = uniform(&mut rng, Some(scheme.extras.local_gamma_radius), [0.1, 0.4]);
                params.intensity.push(IntensityOp::LocalGamma { gamma, center, radius });
            }
            Sharpening => params.intensity.push(IntensityOp::Sharpening {
                amount: uniform(&mut rng, m, SHARPEN),
                sigma: scheme.extras.sharpen_sigma,
            }),
            Mirror => unreachable!(),
        }
    }
    params
}
