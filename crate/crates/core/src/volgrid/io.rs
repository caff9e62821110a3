use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{shape_len, DType, Volume, VolumeKind};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct MvolHeader {
    shape: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    kind: VolumeKind,
    byte_order: String,
    #[serde(default = "default_axis_order")]
    axis_order: String,
}

fn default_axis_order() -> String {
    "zyx".to_string()
}

/// Resolves `foo`, `foo.json` or `foo.raw` to the `(header, payload)` pair.
pub fn mvol_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (json.into(), raw.into())
}

pub fn save_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, raw_path) = mvol_paths(path);
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let header = MvolHeader {
        shape: vol.shape(),
        spacing: vol.spacing(),
        origin: vol.origin(),
        dtype: vol.dtype().as_str().to_string(),
        kind: vol.kind(),
        byte_order: "little".to_string(),
        axis_order: default_axis_order(),
    };
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;

    let dtype = vol.dtype();
    let mut bytes = Vec::with_capacity(vol.len() * dtype.byte_width());
    match dtype {
        DType::F32 => vol
            .data()
            .iter()
            .for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
        DType::U8 => bytes.extend(vol.data().iter().map(|&v| v as u8)),
        DType::U16 => vol
            .data()
            .iter()
            .for_each(|&v| bytes.extend_from_slice(&(v as u16).to_le_bytes())),
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (json_path, raw_path) = mvol_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: MvolHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    let bad_header = |reason: String| Error::Header {
        path: json_path.clone(),
        reason,
    };
    if header.byte_order != "little" {
        return Err(bad_header(format!("unsupported byte order `{}`", header.byte_order)));
    }
    if header.axis_order != "zyx" {
        return Err(bad_header(format!("unsupported axis order `{}`", header.axis_order)));
    }
    let dtype = DType::parse(&header.dtype)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let width = dtype.byte_width();
    let expected = shape_len(header.shape);
    if bytes.len() % width != 0 || bytes.len() / width != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len() / width,
        });
    }
    let data: Vec<f32> = match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        DType::U8 => bytes.iter().map(|&b| b as f32).collect(),
        DType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
    };
    Volume::new(header.shape, header.spacing, header.origin, header.kind, dtype, data)
}
