//! Config-driven end-to-end runs.
//!
//! A run reads a manifest of MVOL volumes plus a ground-truth box CSV and
//! writes every stage's artifacts into a run directory:
//!
//! ```text
//! config.json            resolved configuration
//! gt_preprocessed.csv    ground truth in preprocessed voxel coordinates
//! preprocessed/<id>      resampled volumes (optional)
//! pseudomask/<id>        ellipsoid masks (optional)
//! augment_preview/<id>   one augmented sample per image (optional)
//! tiles.jsonl            sliding-window tiles per image
//! predictions.csv        stitched detections of the primary detector
//! predictions_second.csv, predictions_ensemble.csv (with a second detector)
//! froc_iou<t>.tsv        FROC curve per evaluation IoU
//! report.json            evaluation summary
//! ```
//!
//! Nothing time-dependent is written, so identical inputs give identical
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{ellipsoid_mask_with, read_boxes_csv, write_boxes_csv, BoxTable};
use crate::augment::{augment, draw_params, scheme_table, AugScheme, Sample, SchemeName};
use crate::detect::{ensemble_fuse, BlobDetector, DetectionSet, DEFAULT_ENSEMBLE_IOU, DEFAULT_STITCH_IOU};
use crate::froc::{curve_tsv, evaluate, FrocReport, EVAL_IOUS, FP_RATES};
use crate::sampler::tile_volume;
use crate::volgrid::{
    load_volume, needs_resampling, resample_with, save_volume, Volume, DEFAULT_SPACING_TOLERANCE, TARGET_SPACING,
};
use crate::{BoxF, Error, Exec, PatchSpec, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_spacing: [f64; 3],
    pub spacing_tolerance: f64,
    pub patch_size: [usize; 3],
    pub tile_overlap: f64,
    pub augmentation_scheme: SchemeName,
    /// Optional path to a scheme JSON overriding the built-in table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augmentation_config: Option<PathBuf>,
    pub stitch_iou: f64,
    pub ensemble_iou: f64,
    pub eval_iou: Vec<f64>,
    pub fp_points: Vec<f64>,
    pub seed: u64,
    pub pad_value: f32,
    pub detector: BlobDetector,
    /// Second model; when set its detections are fused with the primary ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_detector: Option<BlobDetector>,
    pub write_preprocessed: bool,
    pub write_pseudomasks: bool,
    pub augment_preview: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_spacing: TARGET_SPACING,
            spacing_tolerance: DEFAULT_SPACING_TOLERANCE,
            patch_size: [192; 3],
            tile_overlap: 0.5,
            augmentation_scheme: SchemeName::B,
            augmentation_config: None,
            stitch_iou: DEFAULT_STITCH_IOU,
            ensemble_iou: DEFAULT_ENSEMBLE_IOU,
            eval_iou: EVAL_IOUS.to_vec(),
            fp_points: FP_RATES.to_vec(),
            seed: 0,
            pad_value: 0.0,
            detector: BlobDetector::default(),
            ensemble_detector: None,
            write_preprocessed: false,
            write_pseudomasks: false,
            augment_preview: false,
        }
    }
}

fn is_toml(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("toml")
}

impl PipelineConfig {
    /// Reads TOML (`.toml`) or JSON (anything else); missing keys take defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = if is_toml(path) {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = if is_toml(path) { self.to_toml()? } else { self.to_json() };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.target_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("target_spacing {:?} must be positive", self.target_spacing));
        }
        if !(self.spacing_tolerance >= 0.0) {
            return bad("spacing_tolerance must be non-negative".into());
        }
        if self.patch_size.contains(&0) {
            return bad("patch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.tile_overlap) {
            return bad("tile_overlap must lie in [0, 1)".into());
        }
        for (name, v) in [("stitch_iou", self.stitch_iou), ("ensemble_iou", self.ensemble_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.eval_iou.is_empty() || self.eval_iou.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("eval_iou must be a non-empty list in [0, 1]".into());
        }
        if self.fp_points.is_empty() || self.fp_points.iter().any(|&v| !(v > 0.0)) {
            return bad("fp_points must be a non-empty list of positive rates".into());
        }
        Ok(())
    }

    /// The augmentation table in effect.
    pub fn scheme(&self) -> Result<AugScheme> {
        match &self.augmentation_config {
            None => Ok(scheme_table(self.augmentation_scheme)),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                AugScheme::from_json(&text)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// MVOL path, relative to the manifest file.
    pub path: PathBuf,
}

/// Input listing: volumes plus a ground-truth CSV in original voxel
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub ground_truth: PathBuf,
    pub volumes: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(ground_truth: impl Into<PathBuf>, volumes: Vec<ManifestEntry>) -> Self {
        Manifest {
            ground_truth: ground_truth.into(),
            volumes,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = std::collections::BTreeSet::new();
        for v in &m.volumes {
            if !seen.insert(&v.image_id) {
                return Err(Error::Config(format!("duplicate image id `{}` in manifest", v.image_id)));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Maps half-open voxel boxes from `from` spacing to `to` spacing on grids
/// sharing the outer edge at index 0.
pub fn rescale_boxes(boxes: &[BoxF], from: [f64; 3], to: [f64; 3]) -> Vec<BoxF> {
    boxes
        .iter()
        .map(|b| {
            let mut r = b.clone();
            for a in 0..3 {
                let f = from[a] / to[a];
                r.min[a] = b.min[a] * f;
                r.max[a] = b.max[a] * f;
            }
            r
        })
        .collect()
}

/// Resamples to the target spacing when the deviation exceeds the tolerance,
/// carrying the boxes along.
pub fn preprocess(vol: &Volume, boxes: &[BoxF], cfg: &PipelineConfig, exec: Exec) -> Result<(Volume, Vec<BoxF>)> {
    if needs_resampling(vol.spacing(), cfg.target_spacing, cfg.spacing_tolerance)? {
        let out = resample_with(vol, cfg.target_spacing, exec)?;
        let boxes = rescale_boxes(boxes, vol.spacing(), cfg.target_spacing);
        Ok((out, boxes))
    } else {
        Ok((vol.clone(), boxes.to_vec()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub image_id: String,
    pub shape: [usize; 3],
    pub tiles: Vec<PatchSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n_images: usize,
    pub n_gt: usize,
    pub n_predictions: usize,
    pub ensembled: bool,
    pub evaluations: Vec<FrocReport>,
}

impl RunReport {
    /// FROC score at `iou`, if evaluated.
    pub fn score_at(&self, iou: f64) -> Option<f64> {
        self.evaluations
            .iter()
            .find(|r| r.curve.iou_threshold == iou)
            .map(|r| r.curve.score)
    }
}

struct Prepared {
    id: String,
    volume: Volume,
    gt: Vec<BoxF>,
}

struct Detected {
    primary: DetectionSet,
    second: Option<DetectionSet>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_table(sets: &[DetectionSet]) -> BoxTable {
    sets.iter().map(|s| (s.image_id.clone(), s.boxes.clone())).collect()
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs preprocess, optional previews, tiling, detection, stitching,
/// optional ensembling and FROC evaluation. Per-image work fans out over
/// `exec`; results are merged in manifest order.
pub fn run_pipeline(cfg: &PipelineConfig, manifest: &Manifest, run_dir: impl AsRef<Path>, exec: Exec) -> Result<RunReport> {
    let run_dir = run_dir.as_ref();
    stage("config", cfg.validate())?;
    stage("config", mkdir(run_dir))?;
    stage("config", write(&run_dir.join("config.json"), &cfg.to_json()))?;

    let gt_table = stage("preprocess", read_boxes_csv(manifest.resolve(&manifest.ground_truth)))?;
    let prepared: Vec<Prepared> = stage(
        "preprocess",
        exec.map(&manifest.volumes, |entry| -> Result<Prepared> {
            let vol = load_volume(manifest.resolve(&entry.path))?;
            let gt = gt_table.get(&entry.image_id).cloned().unwrap_or_default();
            let (volume, gt) = preprocess(&vol, &gt, cfg, exec)?;
            Ok(Prepared {
                id: entry.image_id.clone(),
                volume,
                gt,
            })
        })
        .into_iter()
        .collect(),
    )?;
    let unknown: Vec<&String> = gt_table
        .keys()
        .filter(|id| !prepared.iter().any(|p| &p.id == *id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("ground truth lists ids missing from the manifest: {unknown:?}")).in_stage("preprocess"));
    }
    let gt_pre: BoxTable = prepared.iter().map(|p| (p.id.clone(), p.gt.clone())).collect();
    stage("preprocess", write_boxes_csv(run_dir.join("gt_preprocessed.csv"), &gt_pre, false))?;
    if cfg.write_preprocessed {
        let dir = run_dir.join("preprocessed");
        stage("preprocess", mkdir(&dir))?;
        for p in &prepared {
            stage("preprocess", save_volume(&p.volume, dir.join(&p.id)))?;
        }
    }

    if cfg.write_pseudomasks {
        let dir = run_dir.join("pseudomask");
        stage("pseudomask", mkdir(&dir))?;
        for p in &prepared {
            let mask = stage("pseudomask", ellipsoid_mask_with(&p.gt, p.volume.shape(), exec))?;
            stage("pseudomask", save_volume(&mask, dir.join(&p.id)))?;
        }
    }

    if cfg.augment_preview {
        let dir = run_dir.join("augment_preview");
        stage("augment", mkdir(&dir))?;
        let scheme = stage("augment", cfg.scheme())?;
        let mut boxes = BoxTable::new();
        for (i, p) in prepared.iter().enumerate() {
            let sample = stage("augment", Sample::from_boxes(p.volume.clone(), &p.gt))?;
            let params = draw_params(&scheme, cfg.seed.wrapping_add(i as u64));
            let out = stage("augment", augment(&sample, &params, exec))?;
            stage("augment", save_volume(out.image(), dir.join(format!("{}_image", p.id))))?;
            stage("augment", save_volume(out.mask(), dir.join(format!("{}_mask", p.id))))?;
            boxes.insert(p.id.clone(), out.boxes().to_vec());
        }
        stage("augment", write_boxes_csv(dir.join("boxes.csv"), &boxes, false))?;
    }

    let tiles: Vec<Vec<PatchSpec>> = stage(
        "tile",
        prepared
            .iter()
            .map(|p| tile_volume(p.volume.shape(), cfg.patch_size, cfg.tile_overlap))
            .collect(),
    )?;
    let mut jsonl = String::new();
    for (p, t) in prepared.iter().zip(&tiles) {
        let rec = TileRecord {
            image_id: p.id.clone(),
            shape: p.volume.shape(),
            tiles: t.clone(),
        };
        jsonl.push_str(&serde_json::to_string(&rec)?);
        jsonl.push('\n');
    }
    stage("tile", write(&run_dir.join("tiles.jsonl"), &jsonl))?;

    let jobs: Vec<(&Prepared, Vec<PatchSpec>)> = prepared.iter().zip(tiles).collect();
    let detected: Vec<Detected> = stage(
        "detect",
        exec.map(&jobs, |(p, tiles)| -> Result<Detected> {
            let run = |det: &BlobDetector| {
                det.detect_tiled(&p.id, &p.volume, tiles, cfg.pad_value, cfg.stitch_iou, exec)
            };
            Ok(Detected {
                primary: run(&cfg.detector)?,
                second: cfg.ensemble_detector.as_ref().map(run).transpose()?,
            })
        })
        .into_iter()
        .collect(),
    )?;
    let primary: Vec<DetectionSet> = detected.iter().map(|d| d.primary.clone()).collect();
    stage("stitch", write_boxes_csv(run_dir.join("predictions.csv"), &to_table(&primary), true))?;

    let final_sets = if cfg.ensemble_detector.is_some() {
        let second: Vec<DetectionSet> = detected.iter().filter_map(|d| d.second.clone()).collect();
        stage("ensemble", write_boxes_csv(run_dir.join("predictions_second.csv"), &to_table(&second), true))?;
        let fused: Vec<DetectionSet> = stage(
            "ensemble",
            primary
                .iter()
                .zip(&second)
                .map(|(a, b)| ensemble_fuse(a, b, cfg.ensemble_iou))
                .collect(),
        )?;
        stage("ensemble", write_boxes_csv(run_dir.join("predictions_ensemble.csv"), &to_table(&fused), true))?;
        fused
    } else {
        primary
    };

    let pairs: Vec<(DetectionSet, Vec<BoxF>)> = final_sets
        .iter()
        .zip(&prepared)
        .map(|(d, p)| (d.clone(), p.gt.clone()))
        .collect();
    let mut evaluations = Vec::new();
    for &iou in &cfg.eval_iou {
        let rep = stage("eval-froc", evaluate(&pairs, iou, &cfg.fp_points, exec))?;
        stage("eval-froc", write(&run_dir.join(format!("froc_iou{iou}.tsv")), &curve_tsv(&rep.curve)))?;
        evaluations.push(rep);
    }
    let report = RunReport {
        n_images: prepared.len(),
        n_gt: prepared.iter().map(|p| p.gt.len()).sum(),
        n_predictions: final_sets.iter().map(|s| s.boxes.len()).sum(),
        ensembled: cfg.ensemble_detector.is_some(),
        evaluations,
    };
    stage("report", write(&run_dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n")))?;
    Ok(report)
}

/// Lists every file below `dir` with its contents, sorted by relative path.
pub fn snapshot_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                out.insert(path.strip_prefix(root).expect("below root").to_path_buf(), bytes);
            }
        }
        Ok(())
    }
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{generate_phantom, random_phantom_spec};

    #[test]
    fn config_roundtrips() {
        let mut cfg = PipelineConfig::default();
        cfg.ensemble_detector = Some(BlobDetector {
            intensity_threshold: 0.4,
            ..Default::default()
        });
        cfg.seed = 17;
        let back: PipelineConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_defaults_and_partial_files() {
        let cfg: PipelineConfig = toml::from_str("seed = 4\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.target_spacing, [1.40, 1.43, 1.43]);
        assert_eq!(cfg.patch_size, [192; 3]);
        assert_eq!(cfg.eval_iou, vec![0.1, 0.3]);
        assert!(toml::from_str::<PipelineConfig>("bogus = 1\n").is_err());
        let mut bad = PipelineConfig::default();
        bad.tile_overlap = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rescale_matches_resampled_grid() {
        let b = BoxF::new([0.0, 10.0, 20.0], [14.0, 20.0, 30.0]).unwrap();
        let r = rescale_boxes(&[b], [1.0, 1.43, 2.86], [1.4, 1.43, 1.43]);
        assert_eq!(r[0].min, [0.0, 10.0, 40.0]);
        assert!((r[0].max[0] - 10.0).abs() < 1e-12);
    }

    fn tiny_dataset(dir: &Path, n: usize) -> Manifest {
        let mut gt = BoxTable::new();
        let mut volumes = vec![];
        for i in 0..n {
            let spec = random_phantom_spec([48, 40, 40], 2, [3, 5], [1.0, 1.5], 0.02, i as u64).unwrap();
            let (vol, boxes) = generate_phantom(&spec).unwrap();
            let vol = vol.with_geometry(TARGET_SPACING, [0.0; 3]).unwrap();
            let id = format!("img{i:02}");
            save_volume(&vol, dir.join(&id)).unwrap();
            gt.insert(id.clone(), boxes);
            volumes.push(ManifestEntry {
                image_id: id.clone(),
                path: id.into(),
            });
        }
        write_boxes_csv(dir.join("gt.csv"), &gt, false).unwrap();
        let m = Manifest::new("gt.csv", volumes);
        m.save(dir.join("manifest.json")).unwrap();
        Manifest::load(dir.join("manifest.json")).unwrap()
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            patch_size: [32, 32, 32],
            write_pseudomasks: true,
            augment_preview: true,
            write_preprocessed: true,
            ..Default::default()
        }
    }

    #[test]
    fn end_to_end_perfect_and_deterministic() {
        let data = tempfile::tempdir().unwrap();
        let m = tiny_dataset(data.path(), 4);
        let cfg = small_config();
        let a = data.path().join("run_a");
        let b = data.path().join("run_b");
        let ra = run_pipeline(&cfg, &m, &a, Exec::Parallel).unwrap();
        let rb = run_pipeline(&cfg, &m, &b, Exec::Sequential).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.score_at(0.3), Some(1.0));
        assert!(ra.score_at(0.1).unwrap() >= ra.score_at(0.3).unwrap());
        assert_eq!(snapshot_dir(&a).unwrap(), snapshot_dir(&b).unwrap());
        assert!(a.join("pseudomask/img00.json").exists());
        assert!(a.join("augment_preview/boxes.csv").exists());
    }

    #[test]
    fn self_ensemble_matches_single_model() {
        let data = tempfile::tempdir().unwrap();
        let m = tiny_dataset(data.path(), 3);
        let mut cfg = small_config();
        let single = run_pipeline(&cfg, &m, data.path().join("single"), Exec::default()).unwrap();
        cfg.ensemble_detector = Some(cfg.detector.clone());
        let ens = run_pipeline(&cfg, &m, data.path().join("ens"), Exec::default()).unwrap();
        for (s, e) in single.evaluations.iter().zip(&ens.evaluations) {
            assert_eq!(s.curve.score, e.curve.score);
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let data = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            "gt.csv",
            vec![ManifestEntry {
                image_id: "x".into(),
                path: "missing".into(),
            }],
        );
        write_boxes_csv(data.path().join("gt.csv"), &BoxTable::new(), false).unwrap();
        let mut m2 = m.clone();
        m2.base_dir = data.path().to_path_buf();
        let err = run_pipeline(&PipelineConfig::default(), &m2, data.path().join("run"), Exec::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "preprocess", .. }), "{err}");
    }
}
