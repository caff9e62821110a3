//! Retina U-Net topology planner.
//!
//! Reproduces the architecture arithmetic of the widened detector: per-level
//! spatial sizes under stride-2 downsampling, channel counts after widening
//! with a hard cap, and an FPN-style decoder that upsamples with transposed
//! convolutions. Nothing here executes a network. Activation (leaky ReLU) and
//! normalisation (instance norm in the encoder, group norm in the heads) are
//! recorded as labels only.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    TransposedConvolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLevel {
    pub level: usize,
    pub spatial_size: [usize; 3],
    pub channels: usize,
    pub stride_from_previous: [usize; 3],
    pub kernel_size: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderLevel {
    pub level: usize,
    pub spatial_size: [usize; 3],
    pub channels: usize,
    pub upsample_stride: [usize; 3],
    pub upsample_mode: UpsampleMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyPlan {
    pub patch_size: [usize; 3],
    pub base_channels: usize,
    pub widen_factor: f64,
    pub max_channels: Option<usize>,
    pub activation: String,
    pub encoder_norm: String,
    pub head_norm: String,
    pub levels: Vec<EncoderLevel>,
    pub decoder_levels: Vec<DecoderLevel>,
    pub heads_on_levels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub patch_size: [usize; 3],
    pub base_channels: usize,
    pub widen_factor: f64,
    /// `None` disables the cap.
    pub max_channels: Option<usize>,
    pub n_levels: usize,
    pub head_levels: Vec<usize>,
    pub kernel_size: [usize; 3],
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            patch_size: [192, 192, 192],
            base_channels: 32,
            widen_factor: 1.5,
            max_channels: Some(384),
            n_levels: 6,
            head_levels: vec![2, 3, 4, 5],
            kernel_size: [3, 3, 3],
        }
    }
}

pub fn plan_topology(
    patch_size: [usize; 3],
    base_channels: usize,
    widen_factor: f64,
    max_channels: Option<usize>,
    n_levels: usize,
) -> Result<TopologyPlan> {
    plan_with(&TopologyConfig {
        patch_size,
        base_channels,
        widen_factor,
        max_channels,
        n_levels,
        ..TopologyConfig::default()
    })
}

pub fn plan_with(cfg: &TopologyConfig) -> Result<TopologyPlan> {
    if cfg.n_levels < 2 {
        return Err(Error::InvalidArgument(format!("n_levels {} < 2", cfg.n_levels)));
    }
    if cfg.patch_size.contains(&0) || cfg.base_channels == 0 {
        return Err(Error::InvalidArgument("non-positive patch size or channel base".into()));
    }
    if !(cfg.widen_factor > 0.0 && cfg.widen_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("widen factor {}", cfg.widen_factor)));
    }
    let widened = (cfg.base_channels as f64 * cfg.widen_factor).round() as usize;
    if widened == 0 {
        return Err(Error::InvalidArgument("widened channel count rounds to 0".into()));
    }
    let cap = cfg.max_channels.unwrap_or(usize::MAX);
    let mut levels: Vec<EncoderLevel> = Vec::with_capacity(cfg.n_levels);
    let mut size = cfg.patch_size;
    for level in 0..cfg.n_levels {
        let stride = if level == 0 {
            [1; 3]
        } else {
            // halve where the axis is still even; otherwise keep it
            size.map(|s| if s % 2 == 0 && s >= 2 { 2 } else { 1 })
        };
        if level > 0 && stride == [1; 3] {
            return Err(Error::InvalidArgument(format!(
                "patch {:?} cannot be downsampled to {} levels",
                cfg.patch_size, cfg.n_levels
            )));
        }
        size = [0, 1, 2].map(|a| size[a] / stride[a]);
        let channels = widened
            .checked_shl(level as u32)
            .filter(|c| c >> level == widened)
            .unwrap_or(usize::MAX)
            .min(cap);
        levels.push(EncoderLevel {
            level,
            spatial_size: size,
            channels,
            stride_from_previous: stride,
            kernel_size: cfg.kernel_size,
        });
    }
    let decoder_levels = (0..cfg.n_levels - 1)
        .rev()
        .map(|level| DecoderLevel {
            level,
            spatial_size: levels[level].spatial_size,
            channels: levels[level].channels,
            upsample_stride: levels[level + 1].stride_from_previous,
            upsample_mode: UpsampleMode::TransposedConvolution,
        })
        .collect();
    let mut heads_on_levels: Vec<usize> = cfg
        .head_levels
        .iter()
        .copied()
        .filter(|&l| l < cfg.n_levels)
        .collect();
    heads_on_levels.sort_unstable();
    heads_on_levels.dedup();
    Ok(TopologyPlan {
        patch_size: cfg.patch_size,
        base_channels: cfg.base_channels,
        widen_factor: cfg.widen_factor,
        max_channels: cfg.max_channels,
        activation: "leaky_relu".into(),
        encoder_norm: "instance_norm".into(),
        head_norm: "group_norm".into(),
        levels,
        decoder_levels,
        heads_on_levels,
    })
}

/// Stable pretty-printed JSON of the plan, newline-terminated.
pub fn plan_summary(plan: &TopologyPlan) -> String {
    let mut s = serde_json::to_string_pretty(plan).expect("plan serialises");
    s.push('\n');
    s
}
